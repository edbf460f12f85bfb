#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace glmprog::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

// Runs one command. `args` excludes the program name. Returns the exit
// status: 0 on success, 2 on usage errors, 1 on runtime errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace glmprog::cli
