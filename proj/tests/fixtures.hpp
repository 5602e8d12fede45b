#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "tdl/data.hpp"

namespace fixture {

inline tdl::Dataset slice(const tdl::Dataset& ds, std::size_t begin, std::size_t end) {
  tdl::Dataset out;
  for (std::size_t i = begin; i < end; ++i) {
    out.features.push_back(ds.features[i]);
    out.annotations.push_back(ds.annotations[i]);
  }
  return out;
}

inline tdl::Dataset small_synth(std::size_t n, std::uint64_t seed = 7) {
  tdl::SynthSpec spec;
  spec.num_utterances = n;
  spec.min_fake_segments = 1;
  return tdl::synth_dataset(spec, seed);
}

// Fresh directory under the system temp dir, named after the running test.
inline std::filesystem::path temp_dir(const std::string& tag = "") {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  std::string name = std::string("tdl_") + info->test_suite_name() + "_" + info->name() + tag;
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
