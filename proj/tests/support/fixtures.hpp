#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "nst/image.hpp"

namespace nst::testing {

inline std::string data_path(const std::string& rel) { return std::string(NST_DATA_DIR) + "/" + rel; }

inline Tensor fixture(const std::string& rel, const PreprocessSpec& spec = {}) {
  return preprocess(load_image(data_path(rel)), spec);
}

inline std::vector<Tensor> corpus(const PreprocessSpec& spec = {}) {
  std::vector<Tensor> out;
  for (int i = 0; i < 8; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "corpus/%02d.png", i);
    out.push_back(fixture(name, spec));
  }
  return out;
}

inline Tensor content_image(int k, const PreprocessSpec& spec = {}) {
  return fixture("pairs/content_" + std::to_string(k) + ".png", spec);
}

inline Tensor style_image(int k, const PreprocessSpec& spec = {}) {
  return fixture("pairs/style_" + std::to_string(k) + ".png", spec);
}

}  // namespace nst::testing
