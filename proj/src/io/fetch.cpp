#include "symclone/fetch.hpp"

#include <curl/curl.h>
#include <openssl/evp.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cstdio>
#include <fstream>
#include <memory>

#include "symclone/error.hpp"

namespace symclone {

const std::vector<RemoteFile>& canonical_mnist_files() {
  static const std::vector<RemoteFile> files{
      {"train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"},
      {"train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"},
      {"t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"},
      {"t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"},
  };
  return files;
}

namespace {

std::string digest_file(const std::filesystem::path& path, const EVP_MD* md) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1) throw Error("digest initialisation failed");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), out, &len);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[out[i] >> 4];
    s += hex[out[i] & 15];
  }
  return s;
}

std::size_t write_cb(char* data, std::size_t size, std::size_t n, void* user) {
  return std::fwrite(data, size, n, static_cast<std::FILE*>(user)) * size;
}

}  // namespace

std::string md5_file(const std::filesystem::path& path) { return digest_file(path, EVP_md5()); }
std::string sha256_file(const std::filesystem::path& path) { return digest_file(path, EVP_sha256()); }

void download(const std::string& url, const std::filesystem::path& dest, long timeout_seconds) {
  static const bool initialised = curl_global_init(CURL_GLOBAL_DEFAULT) == CURLE_OK;
  if (!initialised) throw Error("libcurl initialisation failed");
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw Error("libcurl handle allocation failed");
  const auto partial = dest.string() + ".part";
  std::FILE* f = std::fopen(partial.c_str(), "wb");
  if (!f) throw Error("cannot write " + partial);
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 20L);
  curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT, timeout_seconds);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_cb);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, f);
  const CURLcode rc = curl_easy_perform(curl.get());
  std::fclose(f);
  if (rc != CURLE_OK) {
    std::filesystem::remove(partial);
    throw Error("download of " + url + " failed: " + curl_easy_strerror(rc));
  }
  std::filesystem::rename(partial, dest);
}

std::vector<std::filesystem::path> fetch_mnist(const std::filesystem::path& directory, const std::string& base_url) {
  std::filesystem::create_directories(directory);
  std::vector<std::filesystem::path> out;
  for (const auto& file : canonical_mnist_files()) {
    const auto path = directory / file.name;
    if (!std::filesystem::exists(path) || md5_file(path) != file.md5) download(base_url + file.name, path);
    const auto got = md5_file(path);
    if (got != file.md5) throw FormatError(file.name + ": checksum " + got + " does not match " + file.md5);
    out.push_back(path);
  }
  return out;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

}  // namespace symclone
