#include "starsfm/sampling.h"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace starsfm {

std::vector<int> SubsequenceWindow::Frames() const {
  std::vector<int> frames;
  for (int k = 0; k < length; ++k) frames.push_back(First() + stride * k);
  return frames;
}

std::vector<SubsequenceWindow> SampleSubsequences(int sequence_length, uint64_t seed,
                                                  const SubsequenceOptions& options) {
  int smallest = sequence_length + 1;
  for (const auto* set : {&options.consecutive_lengths, &options.stride2_lengths, &options.stride4_lengths})
    for (int l : *set) smallest = std::min(smallest, l);
  if (sequence_length < smallest) throw std::invalid_argument("sequence shorter than the smallest window");
  if (options.center_spacing <= 0) throw std::invalid_argument("center spacing must be positive");

  std::mt19937_64 rng(seed);
  const int span = std::min(options.center_spacing, sequence_length);
  const int offset = std::uniform_int_distribution<int>(0, span - 1)(rng);
  std::vector<SubsequenceWindow> windows;
  for (int center = offset; center < sequence_length; center += options.center_spacing) {
    for (const auto& [stride, lengths] : {std::pair{1, &options.consecutive_lengths},
                                          std::pair{2, &options.stride2_lengths},
                                          std::pair{4, &options.stride4_lengths}}) {
      for (int length : *lengths) {
        const SubsequenceWindow w{center, stride, length};
        if (w.First() >= 0 && w.Last() < sequence_length) windows.push_back(w);
      }
    }
  }
  return windows;
}

}  // namespace starsfm
