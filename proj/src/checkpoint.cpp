#include "fmae/checkpoint.hpp"

#include <cstdio>
#include <fstream>

namespace fmae {

namespace {

constexpr const char* kMagic = "FMAE-CKPT 1";

template <typename U>
void write_raw(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_raw(std::istream& in) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!in) throw CheckpointTruncatedError("checkpoint: truncated record");
  return value;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out << kMagic << "\n";
    for (const auto& [key, value] : manifest) out << key << " = " << value << "\n";
    out << "tensors " << tensors.size() << "\n";
    for (const auto& blob : tensors) {
      write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(blob.name.size()));
      out.write(blob.name.data(), static_cast<std::streamsize>(blob.name.size()));
      write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(blob.dtype));
      write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(blob.shape.size()));
      for (auto d : blob.shape) write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(d));
      write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(blob.payload.size()));
      out.write(reinterpret_cast<const char*>(blob.payload.data()),
                static_cast<std::streamsize>(blob.payload.size()));
    }
    if (!out.flush()) throw IoError("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot move checkpoint into place at '" + path + "'");
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw CheckpointTruncatedError("checkpoint: empty file");
  if (line != kMagic) {
    throw CheckpointVersionError("checkpoint: unsupported header '" + line + "'");
  }
  Checkpoint ckpt;
  std::size_t tensor_count = 0;
  while (std::getline(in, line)) {
    if (line.rfind("tensors ", 0) == 0) {
      tensor_count = static_cast<std::size_t>(std::stoull(line.substr(8)));
      break;
    }
    const auto sep = line.find(" = ");
    if (sep == std::string::npos) {
      throw IoError("checkpoint: malformed manifest line '" + line + "'");
    }
    ckpt.manifest[line.substr(0, sep)] = line.substr(sep + 3);
  }
  if (!in) throw CheckpointTruncatedError("checkpoint: manifest ends before tensor table");

  for (std::size_t t = 0; t < tensor_count; ++t) {
    TensorBlob blob;
    const auto name_len = read_raw<std::uint32_t>(in);
    blob.name.resize(name_len);
    in.read(blob.name.data(), name_len);
    if (!in) throw CheckpointTruncatedError("checkpoint: truncated tensor name");
    const auto dtype = read_raw<std::uint32_t>(in);
    if (dtype > 1) throw IoError("checkpoint: unknown dtype tag");
    blob.dtype = static_cast<TensorDtype>(dtype);
    const auto ndim = read_raw<std::uint32_t>(in);
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto extent = static_cast<std::size_t>(read_raw<std::uint64_t>(in));
      blob.shape.push_back(extent);
      total *= extent;
    }
    const auto payload_len = static_cast<std::size_t>(read_raw<std::uint64_t>(in));
    const std::size_t elem = blob.dtype == TensorDtype::kFloat32 ? 4 : 8;
    if (payload_len != total * elem) {
      throw CheckpointShapeError("checkpoint: tensor '" + blob.name +
                                 "' payload does not match its shape");
    }
    blob.payload.resize(payload_len);
    in.read(reinterpret_cast<char*>(blob.payload.data()),
            static_cast<std::streamsize>(payload_len));
    if (!in) throw CheckpointTruncatedError("checkpoint: truncated payload for '" + blob.name + "'");
    ckpt.tensors.push_back(std::move(blob));
  }
  return ckpt;
}

}  // namespace fmae
