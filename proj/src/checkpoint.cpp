#include "subjectlab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "subjectlab/error.hpp"

namespace subjectlab {

namespace {

constexpr const char* kMagic = "subjectlab-checkpoint 1";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\n\r") != std::string::npos)
    throw ValueError(std::string("checkpoint ") + what + " '" + s +
                     "' must be non-empty and contain no whitespace");
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream head;
  head << kMagic << '\n';
  for (const auto& [k, v] : ckpt.meta) {
    check_token(k, "meta key");
    if (v.find('\n') != std::string::npos)
      throw ValueError("checkpoint meta value for '" + k + "' spans lines");
    head << "meta " << k << ' ' << v << '\n';
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& name = ckpt.params.name(i);
    const auto& t = ckpt.params[i];
    check_token(name, "tensor name");
    head << "tensor " << name << ' ' << offset << ' ' << t.size() << ' ';
    for (std::size_t d = 0; d < t.rank(); ++d) head << (d ? "x" : "") << t.dim(d);
    head << '\n';
    offset += t.size() * sizeof(float);
  }
  head << "end\n";
  std::string out = head.str();
  const std::size_t blob_start = out.size();
  out.resize(blob_start + offset);
  char* dst = out.data() + blob_start;
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    for (float f : ckpt.params[i].data()) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(f));
      std::memcpy(dst, &bits, sizeof bits);
      dst += sizeof bits;
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw IoError("checkpoint manifest truncated");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) throw IoError("not a subjectlab checkpoint");

  struct Entry {
    std::string name;
    std::size_t offset, count;
    Shape shape;
  };
  Checkpoint ckpt;
  std::vector<Entry> entries;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    if (line.rfind("meta ", 0) == 0) {
      const auto sp = line.find(' ', 5);
      if (sp == std::string::npos) throw IoError("malformed meta line: " + line);
      ckpt.meta[line.substr(5, sp - 5)] = line.substr(sp + 1);
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream in(line.substr(7));
      Entry e;
      std::string dims;
      if (!(in >> e.name >> e.offset >> e.count >> dims))
        throw IoError("malformed tensor line: " + line);
      std::istringstream ds(dims);
      std::string d;
      while (std::getline(ds, d, 'x')) e.shape.push_back(std::stoull(d));
      if (shape_size(e.shape) != e.count)
        throw IoError("tensor '" + e.name + "' count does not match its shape");
      entries.push_back(std::move(e));
    } else {
      throw IoError("unexpected manifest line: " + line);
    }
  }
  const std::size_t blob = pos;
  for (const auto& e : entries) {
    const std::size_t nbytes = e.count * sizeof(float);
    if (blob + e.offset + nbytes > bytes.size())
      throw IoError("tensor '" + e.name + "' extends past end of checkpoint");
    std::vector<float> data(e.count);
    const char* src = bytes.data() + blob + e.offset;
    for (std::size_t i = 0; i < e.count; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, src + i * sizeof bits, sizeof bits);
      data[i] = std::bit_cast<float>(to_little(bits));
    }
    ckpt.params.add(e.name, Tensor(e.shape, std::move(data)));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw IoError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace subjectlab
