#pragma once

#include <memory>
#include <string>
#include <vector>

#include "symclone/autodiff.hpp"

namespace symclone {

/// Image classifier: [n,1,H,W] images to [n,classes] logits.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual Var forward(Tape& tape, const Var& images) = 0;
  virtual std::vector<ParamPtr> parameters() const = 0;
  virtual std::string kind() const = 0;
  virtual std::int64_t classes() const = 0;

  /// Logits without recording gradients.
  Tensor logits(const Tensor& images);
};

}  // namespace symclone
