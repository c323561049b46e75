#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace symclone {

struct RemoteFile {
  std::string name;
  std::string md5;
};

/// The four canonical MNIST archives and their published MD5 digests.
const std::vector<RemoteFile>& canonical_mnist_files();
inline constexpr const char* kMnistMirror = "https://ossci-datasets.s3.amazonaws.com/mnist/";

std::string md5_file(const std::filesystem::path& path);
std::string sha256_file(const std::filesystem::path& path);

/// HTTP(S) GET into `dest`; throws Error on transport or HTTP failure.
void download(const std::string& url, const std::filesystem::path& dest, long timeout_seconds = 120);

/// Downloads missing archives from `base_url` into `directory` and checks
/// every digest. Returns the verified paths.
std::vector<std::filesystem::path> fetch_mnist(const std::filesystem::path& directory, const std::string& base_url);

/// Keeps freed buffers in the process heap instead of returning them to the
/// OS after every step (large tensors are reallocated each iteration).
void tune_allocator();

}  // namespace symclone
