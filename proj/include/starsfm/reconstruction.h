#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "starsfm/geometry.h"

namespace starsfm {

enum class TrackClass { kClassical, kFeedforward, kVirtualLocal, kVirtualGlobal };

std::string TrackClassName(TrackClass c);
TrackClass ParseTrackClass(const std::string& name);
inline bool IsVirtual(TrackClass c) {
  return c == TrackClass::kVirtualLocal || c == TrackClass::kVirtualGlobal;
}

struct Observation {
  ImageId image = 0;
  Vec2 pixel = Vec2::Zero();
  // Set on virtual observations whose point lies behind the observing camera.
  bool behind_camera = false;
};

struct Track {
  TrackClass track_class = TrackClass::kClassical;
  std::vector<Observation> observations;
  // Known by construction for virtual tracks, triangulated otherwise.
  std::optional<Vec3> point;
  // Provenance: star that produced the track (-1 if none) and, in oracle
  // mode, the ground-truth scene point (-1 if unknown).
  int source_star = -1;
  int point_id = -1;

  const Observation* Find(ImageId image) const;
};

struct Keypoint {
  ImageId image = 0;
  Vec2 pixel = Vec2::Zero();
  int id = 0;
  int point_id = -1;
};

// One star's feedforward output, in the star's own gauge.
struct LocalStarReconstruction {
  ImageId center = 0;
  std::vector<ImageId> members;  // sorted, includes center
  std::vector<Pose> poses;
  std::vector<double> focals;
  std::vector<DepthMap> depths;
  std::vector<Track> tracks;
  // Hidden world-to-star similarity; retained in oracle mode only.
  std::optional<Similarity> gauge;

  int IndexOf(ImageId image) const;  // -1 when absent
  PinholeCamera Camera(int index) const;
  void Validate() const;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct GlobalReconstruction {
  std::map<ImageId, Pose> poses;
  std::map<CameraId, double> focals;
  std::map<ImageId, CameraId> camera_of_image;
  std::map<ImageId, ImageSize> image_sizes;
  std::map<int, double> star_scales;
  std::vector<Vec3> points;

  bool IsRegistered(ImageId id) const { return poses.count(id) > 0; }
  PinholeCamera Camera(ImageId id) const;
};

}  // namespace starsfm
