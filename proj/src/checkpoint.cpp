#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "argprog/policy_network.hpp"
#include "json.hpp"

namespace argprog {

namespace {

constexpr char kMagic[8] = {'A', 'R', 'G', 'P', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= data[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

class Writer {
 public:
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void little_endian(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffU));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(4)); }
  std::uint64_t u64() { return little_endian(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CheckpointError("corrupt checkpoint: unexpected end of data");
  }
  std::uint64_t little_endian(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

nlohmann::json shape_json(const NetworkShape& s) {
  return {{"observation", s.observation}, {"encoder", s.encoder}, {"embedding", s.embedding},
          {"hidden", s.hidden},           {"programs", s.programs}, {"tasks", s.tasks},
          {"args", s.args}};
}

NetworkShape shape_from_json(const nlohmann::json& j) {
  NetworkShape s;
  s.observation = j.at("observation").get<int>();
  s.encoder = j.at("encoder").get<int>();
  s.embedding = j.at("embedding").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.programs = j.at("programs").get<int>();
  s.tasks = j.at("tasks").get<int>();
  s.args = j.at("args").get<int>();
  return s;
}

void write_matrix(Writer& w, const std::string& name, const Eigen::MatrixXd& m) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
  }
}

void read_matrix(Reader& r, const std::string& expected_name, Eigen::MatrixXd& m) {
  const auto name = r.bytes(r.u32());
  if (name != expected_name) {
    throw CheckpointError("corrupt checkpoint: expected array '" + expected_name + "', found '" + name + "'");
  }
  const auto rows = r.u64();
  const auto cols = r.u64();
  if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
    throw CheckpointError("checkpoint array '" + name + "' has unexpected dimensions");
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
  }
}

}  // namespace

void checkpoint_save(const std::filesystem::path& path, const ParameterSet& params, const AdamState& optimizer,
                     const ProgramLibrary& lib, std::uint64_t iteration) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(iteration);
  nlohmann::json manifest{{"library", nlohmann::json::parse(lib.manifest_json())},
                          {"shape", shape_json(params.shape())}};
  const auto manifest_text = manifest.dump();
  w.u64(manifest_text.size());
  w.bytes(manifest_text);
  w.u64(optimizer.step);

  std::uint32_t arrays = 0;
  params.for_each([&](const char*, const Eigen::MatrixXd&) { arrays += 3; });
  w.u32(arrays);
  params.for_each([&](const char* name, const Eigen::MatrixXd& m) { write_matrix(w, name, m); });
  optimizer.m.for_each([&](const char* name, const Eigen::MatrixXd& m) { write_matrix(w, std::string("adam.m/") + name, m); });
  optimizer.v.for_each([&](const char* name, const Eigen::MatrixXd& m) { write_matrix(w, std::string("adam.v/") + name, m); });

  auto& buf = w.buffer();
  const auto checksum = fnv1a(buf.data(), buf.size());
  w.u64(checksum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path, const ProgramLibrary& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof kMagic + 4 + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("corrupt checkpoint: bad header in " + path.string());
  }
  const std::size_t body = buf.size() - 8;
  Reader trailer(buf.data() + body, 8);
  if (trailer.u64() != fnv1a(buf.data(), body)) {
    throw CheckpointError("corrupt checkpoint: checksum mismatch in " + path.string());
  }

  Reader r(buf.data() + sizeof kMagic, body - sizeof kMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.iteration = r.u64();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(r.bytes(r.u64()));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  const auto expected_library = nlohmann::json::parse(expected.manifest_json());
  if (manifest.value("library", nlohmann::json()) != expected_library) {
    throw CheckpointError("checkpoint library manifest does not match the configured library (" +
                          std::string(mode_name(expected.mode())) + ")");
  }
  ck.manifest = manifest.at("library").dump();
  NetworkShape shape;
  try {
    shape = shape_from_json(manifest.at("shape"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint shape: ") + e.what());
  }
  if (shape.programs != expected.size()) throw CheckpointError("checkpoint program head does not match library");

  ck.params = ParameterSet(shape);
  ck.optimizer = AdamState::for_params(ck.params);
  ck.optimizer.step = r.u64();
  const auto arrays = r.u32();
  std::uint32_t seen = 0;
  ck.params.for_each([&](const char* name, Eigen::MatrixXd& m) { read_matrix(r, name, m); ++seen; });
  ck.optimizer.m.for_each([&](const char* name, Eigen::MatrixXd& m) { read_matrix(r, std::string("adam.m/") + name, m); ++seen; });
  ck.optimizer.v.for_each([&](const char* name, Eigen::MatrixXd& m) { read_matrix(r, std::string("adam.v/") + name, m); ++seen; });
  if (seen != arrays || r.remaining() != 0) throw CheckpointError("corrupt checkpoint: array table mismatch");
  return ck;
}

}  // namespace argprog
