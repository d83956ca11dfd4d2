#pragma once

// Trained-model container shared by training and evaluation, plus the binary
// checkpoint format:
//
//   "MRFINNCK"                         8-byte magic
//   u32 format version (1)
//   u32 model kind (0 inn, 1 inn_bwd, 2 fcn)
//   u64 seed, i64 epoch
//   5 x (f64 min, f64 max)             parameter scaler
//   u32 layer count, then per layer u64 in, u64 out, u32 activation
//   INN only: u64 dim, u64 hidden, f64 clamp, u32 blocks, blocks x dim u32 permutation
//   u64 parameter count, then f64 parameters
//
// All fields little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mrfinn/errors.hpp"
#include "mrfinn/fcn.hpp"
#include "mrfinn/features.hpp"
#include "mrfinn/inn.hpp"

namespace mrfinn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'R', 'F', 'I', 'N', 'N', 'C', 'K'};

enum class ModelKind : std::uint32_t { inn = 0, inn_bwd = 1, fcn = 2 };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::inn: return "inn";
    case ModelKind::inn_bwd: return "inn_bwd";
    case ModelKind::fcn: return "fcn";
  }
  return "unknown";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "inn") return ModelKind::inn;
  if (s == "inn_bwd") return ModelKind::inn_bwd;
  if (s == "fcn") return ModelKind::fcn;
  throw InvalidArgument("unknown model kind '" + s + "' (expected inn, inn_bwd or fcn)");
}

/// A network together with the scaler that maps its outputs to parameter units.
struct TrainedModel {
  ModelKind kind = ModelKind::inn;
  std::variant<InnModel, FcnModel> net;
  ParamScaler scaler;
  std::int64_t epoch = 0;

  /// Number of fingerprint samples T the model accepts.
  Eigen::Index fingerprint_length() const {
    if (const auto* inn = std::get_if<InnModel>(&net)) return inn->dim() / 2;
    return std::get<FcnModel>(net).input_dim() / 2;
  }

  Eigen::Index parameter_count() const {
    return std::visit([](const auto& m) { return m.parameter_count(); }, net);
  }

  std::uint64_t seed() const {
    return std::visit([](const auto& m) { return m.seed(); }, net);
  }

  /// Backward process: features (2T x B) -> scaled parameter estimates (5 x B).
  Eigen::MatrixXd estimate_scaled(const Eigen::MatrixXd& features) const {
    if (const auto* inn = std::get_if<InnModel>(&net)) return inn->inverse(features).topRows(kNumParams);
    return std::get<FcnModel>(net).forward(features);
  }

  /// Backward process in parameter units.
  Eigen::MatrixXd estimate(const Eigen::MatrixXd& features) const {
    return scaler.invert(estimate_scaled(features));
  }

  /// Forward process (INN only): parameters in original units (5 x B) -> features (2T x B).
  Eigen::MatrixXd synthesize(const Eigen::MatrixXd& params) const {
    const auto* inn = std::get_if<InnModel>(&net);
    if (!inn) throw InvalidArgument("only invertible models provide the forward process");
    return inn->forward(pad_rows(scaler.apply(params), inn->dim()));
  }
};

namespace detail {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw IoError("cannot write " + path);
  }
  template <typename T>
  void put(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("short write to " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open " + path);
  }
  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw SizeMismatchError(path_ + ": truncated checkpoint");
    return v;
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in_) throw SizeMismatchError(path_ + ": truncated checkpoint");
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::string path_;
};

inline std::vector<nn::DenseLayer> all_layers(const TrainedModel& m) {
  if (const auto* inn = std::get_if<InnModel>(&m.net)) {
    std::vector<nn::DenseLayer> out;
    for (const auto& b : inn->blocks())
      for (const Subnet* s : {&b.s1, &b.t1, &b.s2, &b.t2}) {
        out.push_back(s->hidden);
        out.push_back(s->output);
      }
    return out;
  }
  return std::get<FcnModel>(m.net).layers();
}

}  // namespace detail

inline void save_checkpoint(const TrainedModel& m, const std::string& path) {
  detail::BinaryWriter w(path);
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(m.kind));
  w.put(m.seed());
  w.put(m.epoch);
  for (int p = 0; p < kNumParams; ++p) {
    w.put(m.scaler.min[p]);
    w.put(m.scaler.max[p]);
  }
  const auto layers = detail::all_layers(m);
  w.put(static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    w.put(static_cast<std::uint64_t>(l.in));
    w.put(static_cast<std::uint64_t>(l.out));
    w.put(static_cast<std::uint32_t>(l.activation));
  }
  if (const auto* inn = std::get_if<InnModel>(&m.net)) {
    w.put(static_cast<std::uint64_t>(inn->dim()));
    w.put(static_cast<std::uint64_t>(inn->hidden()));
    w.put(inn->clamp());
    w.put(static_cast<std::uint32_t>(inn->blocks().size()));
    for (const auto& b : inn->blocks())
      for (Index i : b.permutation) w.put(static_cast<std::uint32_t>(i));
  }
  const auto& params = std::visit([](const auto& n) -> const VectorXd& { return n.parameters(); }, m.net);
  w.put(static_cast<std::uint64_t>(params.size()));
  w.bytes(params.data(), static_cast<std::size_t>(params.size()) * sizeof(double));
  w.finish();
}

inline TrainedModel load_checkpoint(const std::string& path) {
  detail::BinaryReader r(path);
  char magic[sizeof(kCheckpointMagic)];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw FormatError(path + ": not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError(path + ": checkpoint version " + std::to_string(version) + " unsupported");
  const auto kind_raw = r.get<std::uint32_t>();
  if (kind_raw > 2) throw FormatError(path + ": unknown model kind");
  TrainedModel m;
  m.kind = static_cast<ModelKind>(kind_raw);
  const auto seed = r.get<std::uint64_t>();
  m.epoch = r.get<std::int64_t>();
  for (int p = 0; p < kNumParams; ++p) {
    m.scaler.min[p] = r.get<double>();
    m.scaler.max[p] = r.get<double>();
  }
  std::vector<nn::DenseLayer> stored(r.get<std::uint32_t>());
  for (auto& l : stored) {
    l.in = static_cast<Index>(r.get<std::uint64_t>());
    l.out = static_cast<Index>(r.get<std::uint64_t>());
    const auto act = r.get<std::uint32_t>();
    if (act > 1) throw FormatError(path + ": unknown activation");
    l.activation = static_cast<nn::Activation>(act);
  }

  if (m.kind == ModelKind::fcn) {
    if (stored.size() != 3) throw FormatError(path + ": FCN checkpoint must hold three layers");
    m.net = FcnModel(stored[0].in, stored[0].out, stored[2].out, seed);
  } else {
    const auto dim = static_cast<Index>(r.get<std::uint64_t>());
    const auto hidden = static_cast<Index>(r.get<std::uint64_t>());
    const auto clamp = r.get<double>();
    const auto blocks = r.get<std::uint32_t>();
    if (dim <= 0 || dim % 2 != 0 || dim > (1 << 24) || blocks == 0 || blocks > 1024)
      throw FormatError(path + ": implausible INN shape");
    std::vector<std::vector<Index>> perms(blocks, std::vector<Index>(static_cast<std::size_t>(dim)));
    for (auto& perm : perms)
      for (auto& v : perm) v = static_cast<Index>(r.get<std::uint32_t>());
    for (const auto& perm : perms)
      if (!is_permutation_of_range(perm)) throw FormatError(path + ": stored permutation is not a bijection");
    InnModel inn(dim, blocks, hidden, seed, clamp);
    for (std::size_t b = 0; b < perms.size(); ++b) inn.set_permutation(b, perms[b]);
    m.net = std::move(inn);
  }
  const auto expected = detail::all_layers(m);
  if (expected.size() != stored.size()) throw FormatError(path + ": layer table disagrees with architecture");
  for (std::size_t i = 0; i < stored.size(); ++i)
    if (stored[i].in != expected[i].in || stored[i].out != expected[i].out ||
        stored[i].activation != expected[i].activation)
      throw FormatError(path + ": layer " + std::to_string(i) + " shape disagrees with architecture");

  const auto count = r.get<std::uint64_t>();
  if (static_cast<Index>(count) != m.parameter_count())
    throw SizeMismatchError(path + ": parameter count " + std::to_string(count) + " does not match architecture");
  VectorXd params(static_cast<Index>(count));
  r.bytes(params.data(), count * sizeof(double));
  if (!r.at_end()) throw SizeMismatchError(path + ": trailing bytes after parameter payload");
  std::visit([&](auto& n) { n.set_parameters(params); }, m.net);
  return m;
}

}  // namespace mrfinn
