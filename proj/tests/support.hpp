#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "histoseq/cli.hpp"
#include "histoseq/image_io.hpp"
#include "histoseq/synthetic.hpp"

namespace testing_support {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("histoseq_" + tag + "_" + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& p) const { return path_ / p; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct CliResult {
    int code = 0;
    std::string out;
};

inline CliResult run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "histoseq");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    const int code = histoseq::cli::run(static_cast<int>(argv.size()), argv.data(), out);
    return {code, out.str()};
}

/// Writes slide.png, slide.xml and a small-model config into `dir`.
inline fs::path write_demo_inputs(const fs::path& dir, int regions = 9, const std::string& extra = "") {
    histoseq::synthetic::SlideSpec spec;
    spec.regions = regions;
    const auto slide = histoseq::synthetic::painted_slide(spec);
    histoseq::write_png(dir / "slide.png", slide.image);
    spit(dir / "slide.xml", histoseq::write_annotations(slide.regions));
    const fs::path cfg = dir / "config.ini";
    spit(cfg,
         "[pipeline]\n"
         "classes = Benign,InSitu,Invasive\n"
         "seed = 11\n"
         "[input]\n"
         "annotations = slide.xml\n"
         "slides = slide.png\n"
         "[model]\n"
         "hidden = 6\n"
         "[train]\n"
         "optimizer = adam\n"
         "learning_rate = 0.005\n"
         "max_epochs = 4\n"
         "[split]\n"
         "mode = kfold\n"
         "k = 3\n" +
             extra);
    return cfg;
}

}  // namespace testing_support
