#pragma once

#include <cstdint>
#include <vector>

namespace starsfm {

struct SubsequenceWindow {
  int center = 0;
  int stride = 1;
  int length = 0;

  // Frames center + stride * (k - length / 2) for k in [0, length).
  int First() const { return center - stride * (length / 2); }
  int Last() const { return First() + stride * (length - 1); }
  std::vector<int> Frames() const;
};

struct SubsequenceOptions {
  int center_spacing = 200;
  std::vector<int> consecutive_lengths = {4, 8, 16, 32, 64, 128};
  std::vector<int> stride2_lengths = {4, 8, 16, 32, 64};
  std::vector<int> stride4_lengths = {4, 8, 16, 32};
};

// Centers at offset + k * spacing with a seeded offset in
// [0, min(spacing, length)); per center every window of the three stride
// families that lies inside [0, sequence_length) is emitted.
std::vector<SubsequenceWindow> SampleSubsequences(int sequence_length, uint64_t seed,
                                                  const SubsequenceOptions& options = {});

}  // namespace starsfm
