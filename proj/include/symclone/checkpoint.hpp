#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "symclone/agnostic.hpp"
#include "symclone/tensor.hpp"

namespace symclone {

inline constexpr int kCheckpointVersion = 1;

/// File layout: 8-byte little-endian manifest length, a JSON manifest
/// {format, version, kind, meta, tensors:[{name,dtype,shape,offset,bytes}]},
/// then the raw little-endian tensor buffers. Offsets count from the first
/// byte after the manifest.
struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Student layers are stored with kind "student" and their spec in meta.
Checkpoint student_checkpoint(const StudentLayer& student, nlohmann::json extra = nlohmann::json::object());
void save_student(const StudentLayer& student, const std::filesystem::path& path,
                  nlohmann::json extra = nlohmann::json::object());
/// Throws FormatError when the stored student kind differs from `expected`.
StudentLayer load_student(const std::filesystem::path& path, std::optional<StudentKind> expected = std::nullopt);
StudentLayer student_from_checkpoint(const Checkpoint& checkpoint, std::optional<StudentKind> expected = std::nullopt);

}  // namespace symclone
