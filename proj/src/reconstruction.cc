#include "starsfm/reconstruction.h"

#include <algorithm>
#include <stdexcept>

namespace starsfm {

std::string TrackClassName(TrackClass c) {
  switch (c) {
    case TrackClass::kClassical: return "classical";
    case TrackClass::kFeedforward: return "feedforward";
    case TrackClass::kVirtualLocal: return "virtual-local";
    case TrackClass::kVirtualGlobal: return "virtual-global";
  }
  return "classical";
}

TrackClass ParseTrackClass(const std::string& name) {
  if (name == "classical") return TrackClass::kClassical;
  if (name == "feedforward") return TrackClass::kFeedforward;
  if (name == "virtual-local") return TrackClass::kVirtualLocal;
  if (name == "virtual-global") return TrackClass::kVirtualGlobal;
  throw std::invalid_argument("unknown track class: " + name);
}

const Observation* Track::Find(ImageId image) const {
  for (const auto& obs : observations) {
    if (obs.image == image) return &obs;
  }
  return nullptr;
}

int LocalStarReconstruction::IndexOf(ImageId image) const {
  auto it = std::lower_bound(members.begin(), members.end(), image);
  if (it == members.end() || *it != image) return -1;
  return static_cast<int>(it - members.begin());
}

PinholeCamera LocalStarReconstruction::Camera(int index) const {
  const DepthMap& depth = depths.at(index);
  return PinholeCamera::Centered(focals.at(index), depth.Width(), depth.Height());
}

void LocalStarReconstruction::Validate() const {
  if (!std::is_sorted(members.begin(), members.end()) ||
      std::adjacent_find(members.begin(), members.end()) != members.end()) {
    throw std::invalid_argument("star members must be sorted and unique");
  }
  if (IndexOf(center) < 0) throw std::invalid_argument("star center missing from members");
  if (poses.size() != members.size() || focals.size() != members.size() ||
      depths.size() != members.size()) {
    throw std::invalid_argument("star member arrays have inconsistent sizes");
  }
  for (double f : focals) {
    if (!(f > 0.0)) throw std::invalid_argument("star focal lengths must be positive");
  }
}

PinholeCamera GlobalReconstruction::Camera(ImageId id) const {
  const ImageSize size = image_sizes.at(id);
  return PinholeCamera::Centered(focals.at(camera_of_image.at(id)), size.width, size.height);
}

}  // namespace starsfm
