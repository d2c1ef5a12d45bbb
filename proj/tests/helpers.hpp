#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace testutil {

// unique scratch directory, removed on scope exit
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path() / ("mren_" + tag + "_XXXXXX");
        std::string tmpl = base.string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed for " + tmpl);
        path = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
    int status = -1;
    std::string out; // stdout + stderr interleaved
};

// runs the CLI under test with stdout/stderr captured
inline CliResult run_cli(const std::string& args) {
#ifdef MREN_CLI_PATH
    const std::string exe = MREN_CLI_PATH;
#else
    const std::string exe = "mren";
#endif
    TempDir cap("cli_out");
    const std::string log = cap.file("out.txt");
    const std::string cmd = exe + " " + args + " >" + log + " 2>&1";
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.status = (raw >= 0 && WIFEXITED(raw)) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(log, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

} // namespace testutil
