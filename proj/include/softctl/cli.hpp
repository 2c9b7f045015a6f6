#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace softctl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitSolverFailure = 2;

/// Flat key=value configuration. Blank lines and lines starting with '#'
/// are ignored; keys are [a-z0-9_.]+; a key may appear once. Problem
/// parameters use "param.<name>". Errors name the source and line.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap parse_config(std::istream& is, const std::string& source);

/// Keys accepted in a config file (besides param.*).
const std::vector<std::string>& config_keys();

/// Runs one subcommand. args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace softctl::cli
