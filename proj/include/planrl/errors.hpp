#pragma once

#include <stdexcept>
#include <string>

namespace planrl {

struct EmptyReference : std::invalid_argument {
  EmptyReference() : std::invalid_argument("reference trajectory has no steps") {}
};

struct SizeLimitExceeded : std::invalid_argument {
  explicit SizeLimitExceeded(const std::string& what) : std::invalid_argument(what) {}
};

struct MissingGroundTruth : std::out_of_range {
  explicit MissingGroundTruth(std::size_t position)
      : std::out_of_range("reference has no step at position " + std::to_string(position)) {}
};

struct EpisodeFinished : std::logic_error {
  EpisodeFinished() : std::logic_error("episode already finished") {}
};

struct GroupTooSmall : std::invalid_argument {
  explicit GroupTooSmall(std::size_t n)
      : std::invalid_argument("rollout group needs at least 2 samples, got " + std::to_string(n)) {}
};

}  // namespace planrl
