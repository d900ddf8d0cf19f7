#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "starsfm/reconstruction.h"

namespace starsfm {

constexpr std::array<double, 6> kAucThresholdsDeg = {1.0, 3.0, 5.0, 10.0, 20.0, 30.0};

// Angular errors in radians for one unordered image pair.
struct PairError {
  ImageId i = 0;
  ImageId j = 0;
  double rotation = 0.0;
  double translation = 0.0;
  double error = 0.0;  // max of the two
};

// Every unordered pair of images registered in the truth. Pairs with an
// image missing from the estimate score pi. Translation errors compare
// relative translation directions, taking the larger angle over the frames
// of both cameras; baselines below 1e-9 of the respective
// scene scale count as zero-length (both: 0, one: pi).
std::vector<PairError> PairwisePoseErrors(const GlobalReconstruction& estimate, const GlobalReconstruction& truth);

// 100 / X * integral over [0, X] of the fraction of errors strictly below t.
double AucAt(const std::vector<double>& errors_deg, double threshold_deg);

std::vector<double> ErrorsInDegrees(const std::vector<PairError>& errors);

}  // namespace starsfm
