#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "multidepth/core.hpp"
#include "multidepth/rng.hpp"
#include "multidepth/sampling.hpp"

namespace testing {

using namespace multidepth;

inline ImageTensor random_image(int c, int h, int w, Rng& rng) {
    ImageTensor img(c, h, w);
    for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
    return img;
}

inline DepthMap random_depth(int h, int w, Rng& rng, double lo = 0.5, double hi = 5.0) {
    DepthMap d(h, w, 0.0f, true);
    for (auto& v : d.depth) v = static_cast<float>(rng.uniform(lo, hi));
    return d;
}

inline MaskSet block_masks(int h, int w) {
    MaskSet ms;
    ms.height = h;
    ms.width = w;
    Mask left(h, w), right(h, w), top(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (x < w / 2) left.set(y, x, true); else right.set(y, x, true);
            if (y < h / 3) top.set(y, x, true);
        }
    }
    ms.add("left", left);
    ms.add("right", right);
    ms.add("top", top);
    return ms;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("multidepth_unit_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace testing
