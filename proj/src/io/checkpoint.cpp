#include "symclone/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace symclone {

static_assert(std::endian::native == std::endian::little, "checkpoint buffers are written in native little-endian order");

using nlohmann::json;

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

namespace {

std::size_t element_size(DType d) { return d == DType::f32 ? 4 : 8; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw FormatError("checkpoint dtype '" + s + "' is not f32 or f64");
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  json manifest{{"format", "symclone-checkpoint"}, {"version", kCheckpointVersion}, {"kind", checkpoint.kind},
                {"meta", checkpoint.meta}, {"tensors", json::array()}};
  std::uint64_t offset = 0;
  for (const auto& [name, t] : checkpoint.tensors) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.numel()) * element_size(t.dtype());
    manifest["tensors"].push_back(
        {{"name", name}, {"dtype", to_string(t.dtype())}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const std::string header = manifest.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    dispatch(t.dtype(), [&]<typename T>() {
      auto d = t.data<T>();
      out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
    });
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw FormatError(path.string() + ": truncated checkpoint header");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data(), 8);
  if (len > bytes.size() - 8) throw FormatError(path.string() + ": manifest length exceeds file size");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": unreadable manifest: " + e.what());
  }
  try {
    if (manifest.value("format", "") != "symclone-checkpoint") throw FormatError(path.string() + ": not a checkpoint");
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));
    }
    Checkpoint ck;
    ck.kind = manifest.at("kind").get<std::string>();
    ck.meta = manifest.at("meta");
    const std::uint64_t base = 8 + len;
    const std::uint64_t region = bytes.size() - base;
    std::uint64_t expected_offset = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const DType dtype = parse_dtype(entry.at("dtype").get<std::string>());
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto size = entry.at("bytes").get<std::uint64_t>();
      for (auto s : shape) {
        if (s < 0) throw FormatError(path.string() + ": negative dimension in tensor '" + name + "'");
      }
      if (size != static_cast<std::uint64_t>(shape_numel(shape)) * element_size(dtype)) {
        throw FormatError(path.string() + ": tensor '" + name + "' byte count does not match its shape");
      }
      if (offset != expected_offset) throw FormatError(path.string() + ": tensor '" + name + "' offset is inconsistent");
      if (offset + size > region) throw FormatError(path.string() + ": tensor '" + name + "' runs past end of file");
      Tensor t(shape, dtype);
      dispatch(dtype, [&]<typename T>() {
        auto d = t.data<T>();
        std::memcpy(d.data(), bytes.data() + base + offset, size);
      });
      ck.tensors.emplace_back(name, std::move(t));
      expected_offset = offset + size;
    }
    if (expected_offset != region) throw FormatError(path.string() + ": trailing bytes after tensor buffers");
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }
}

Checkpoint student_checkpoint(const StudentLayer& student, json extra) {
  const auto& s = student.spec();
  Checkpoint ck;
  ck.kind = "student";
  ck.meta = std::move(extra);
  ck.meta["student_kind"] = to_string(s.kind);
  ck.meta["height"] = s.height;
  ck.meta["width"] = s.width;
  ck.meta["blocks"] = s.blocks;
  ck.meta["embed_dim"] = s.embed_dim;
  ck.meta["dtype"] = to_string(s.dtype);
  for (const auto& p : student.parameters()) ck.tensors.emplace_back(p->name, p->value);
  return ck;
}

void save_student(const StudentLayer& student, const std::filesystem::path& path, json extra) {
  save_checkpoint(student_checkpoint(student, std::move(extra)), path);
}

StudentLayer student_from_checkpoint(const Checkpoint& ck, std::optional<StudentKind> expected) {
  if (ck.kind != "student") throw FormatError("checkpoint kind '" + ck.kind + "' is not a student layer");
  StudentSpec spec;
  try {
    spec.kind = parse_student_kind(ck.meta.at("student_kind").get<std::string>());
    spec.height = ck.meta.at("height").get<std::int64_t>();
    spec.width = ck.meta.at("width").get<std::int64_t>();
    spec.blocks = ck.meta.at("blocks").get<std::int64_t>();
    spec.embed_dim = ck.meta.at("embed_dim").get<std::int64_t>();
    spec.dtype = parse_dtype(ck.meta.at("dtype").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("student checkpoint meta incomplete: ") + e.what());
  }
  if (expected && *expected != spec.kind) {
    throw FormatError("checkpoint holds a " + to_string(spec.kind) + " student, expected " + to_string(*expected));
  }
  SeededRng rng(0);
  StudentLayer student(spec, rng);
  const auto params = student.parameters();
  if (params.size() != ck.tensors.size()) throw FormatError("student checkpoint tensor count does not match its kind");
  for (const auto& p : params) {
    const Tensor& t = ck.tensor(p->name);
    if (t.shape() != p->value.shape() || t.dtype() != p->value.dtype()) {
      throw FormatError("checkpoint tensor '" + p->name + "' has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(p->value.shape()));
    }
    p->value = t;
  }
  return student;
}

StudentLayer load_student(const std::filesystem::path& path, std::optional<StudentKind> expected) {
  return student_from_checkpoint(load_checkpoint(path), expected);
}

}  // namespace symclone
