#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "fmae/errors.hpp"
#include "fmae/tensor.hpp"

namespace fmae {

struct CheckpointVersionError : Error {
  using Error::Error;
};
struct CheckpointTruncatedError : Error {
  using Error::Error;
};
struct CheckpointShapeError : Error {
  using Error::Error;
};

enum class TensorDtype : std::uint32_t { kFloat32 = 0, kFloat64 = 1 };

struct TensorBlob {
  std::string name;
  TensorDtype dtype = TensorDtype::kFloat32;
  std::vector<std::size_t> shape;
  std::vector<unsigned char> payload;
};

/// Versioned checkpoint: a plain-text key/value manifest followed by
/// length-prefixed binary tensor records. Round trips are bit-exact; writes
/// go through a temporary file and an atomic rename.
struct Checkpoint {
  std::map<std::string, std::string> manifest;
  std::vector<TensorBlob> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const TensorBlob* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

template <typename T>
TensorBlob to_blob(const std::string& name, const Tensor<T>& tensor) {
  TensorBlob blob;
  blob.name = name;
  blob.dtype = sizeof(T) == 4 ? TensorDtype::kFloat32 : TensorDtype::kFloat64;
  blob.shape = tensor.shape();
  blob.payload.resize(tensor.size() * sizeof(T));
  std::memcpy(blob.payload.data(), tensor.value().data(), blob.payload.size());
  return blob;
}

/// Copy a stored tensor into an existing parameter, enforcing dtype and
/// shape agreement.
template <typename T>
void blob_into(const TensorBlob& blob, Tensor<T>& tensor) {
  const TensorDtype expected = sizeof(T) == 4 ? TensorDtype::kFloat32 : TensorDtype::kFloat64;
  if (blob.dtype != expected) {
    throw CheckpointShapeError("tensor '" + blob.name + "': stored dtype differs");
  }
  if (blob.shape != tensor.shape()) {
    throw CheckpointShapeError("tensor '" + blob.name + "': stored shape does not match");
  }
  std::memcpy(tensor.mutable_value().data(), blob.payload.data(), blob.payload.size());
}

}  // namespace fmae
