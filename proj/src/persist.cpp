#include "clbruno/persist.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace clbruno {
namespace {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void i64(std::int64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void reals(std::span<const double> v) {
    u64(v.size());
    bytes(v.data(), v.size() * sizeof(double));
  }
  void tensor(const Tensor& t) {
    u64(t.rows());
    u64(t.cols());
    reals(t.data());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_) {
      throw FormatError("model body ends inside a field");
    }
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  double f64() {
    double v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::size_t count(std::size_t limit_bytes_each) {
    const std::uint64_t n = u64();
    if (limit_bytes_each > 0 && n > (in_.size() - pos_) / limit_bytes_each) {
      throw FormatError("array length " + std::to_string(n) + " exceeds the remaining body");
    }
    return static_cast<std::size_t>(n);
  }
  std::vector<double> reals() {
    std::vector<double> v(count(sizeof(double)));
    bytes(v.data(), v.size() * sizeof(double));
    return v;
  }
  Tensor tensor() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    std::vector<double> data = reals();
    if (rows != 0 && cols != 0 && data.size() / rows != cols) {
      throw FormatError("tensor shape does not match its data length");
    }
    if (data.size() != rows * cols) {
      throw FormatError("tensor shape does not match its data length");
    }
    return Tensor(rows, cols, std::move(data));
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_params(Writer& w, const ConditionalFlow& flow) {
  for (const CouplingLayer& layer : flow.layers()) {
    w.u64(layer.split);
    w.u64(layer.transform_upper ? 1 : 0);
    for (const Parameter* p : layer.shift.parameters()) {
      w.tensor(p->value);
    }
    for (const Parameter* p : layer.log_scale.parameters()) {
      w.tensor(p->value);
    }
  }
}

void assign(Parameter& p, Tensor value) {
  if (!value.same_shape(p.value)) {
    throw FormatError("parameter " + p.name + " has an unexpected shape");
  }
  p.value = std::move(value);
  p.sync_grad_shape();
}

std::vector<std::uint8_t> body_of(const ClBrunoModel& model) {
  Writer w;
  const FlowConfig& cfg = model.flow().config();
  w.u64(cfg.dim);
  w.u64(cfg.coupling_layers);
  w.u64(cfg.embedding_dim);
  w.u64(cfg.hidden_width);
  w.u64(model.seed());
  const UpdateConfig& h = model.hyperparameters();
  w.f64(h.alpha1);
  w.f64(h.alpha2);
  w.u64(h.pseudo_size);
  w.u64(h.epochs);
  w.u64(h.batch_size);
  w.f64(h.learning_rate);
  w.u64(h.resample_pseudo ? 1 : 0);
  if (model.preprocessing()) {
    w.u64(1);
    w.reals(model.preprocessing()->mean);
    w.reals(model.preprocessing()->scale);
  } else {
    w.u64(0);
  }

  w.u64(model.tasks().size());
  for (const auto& [t, rec] : model.tasks()) {
    w.i64(t);
    w.u64(rec.label_counts.size());
    for (const auto& [y, n] : rec.label_counts) {
      w.i64(y);
      w.u64(n);
    }
    w.tensor(rec.latent.variance_pre.value);
    w.tensor(rec.latent.correlation_pre.value);
    w.u64(rec.state.count);
    w.reals(rec.state.sums);
  }

  write_params(w, model.flow());

  const EmbeddingTable& emb = model.flow().embeddings();
  w.u64(emb.seed());
  w.u64(emb.task_rows().size());
  for (const auto& [t, row] : emb.task_rows()) {
    w.i64(t);
    w.u64(row);
  }
  w.u64(emb.label_rows().size());
  for (const auto& [key, row] : emb.label_rows()) {
    w.i64(key.first);
    w.i64(key.second);
    w.u64(row);
  }
  w.tensor(emb.task_table().value);
  w.tensor(emb.label_table().value);
  return std::move(w.buffer());
}

ClBrunoModel parse_body(std::span<const std::uint8_t> body) {
  Reader r(body);
  FlowConfig cfg;
  cfg.dim = r.u64();
  cfg.coupling_layers = r.u64();
  cfg.embedding_dim = r.u64();
  cfg.hidden_width = r.u64();
  const std::uint64_t seed = r.u64();
  if (cfg.dim < 2 || cfg.dim > (1u << 20) || cfg.coupling_layers > 1024 ||
      cfg.embedding_dim > (1u << 16) || cfg.hidden_width > (1u << 16)) {
    throw FormatError("implausible model header");
  }
  ClBrunoModel model(cfg, seed);

  UpdateConfig& h = model.hyperparameters();
  h.alpha1 = r.f64();
  h.alpha2 = r.f64();
  h.pseudo_size = r.u64();
  h.epochs = r.u64();
  h.batch_size = r.u64();
  h.learning_rate = r.f64();
  h.resample_pseudo = r.u64() != 0;
  if (r.u64() != 0) {
    Standardizer s{r.reals(), r.reals()};
    if (s.mean.size() != cfg.dim || s.scale.size() != cfg.dim) {
      throw FormatError("preprocessing width does not match the model dimension");
    }
    model.preprocessing() = std::move(s);
  }

  const std::size_t task_count = r.count(1);
  for (std::size_t i = 0; i < task_count; ++i) {
    TaskRecord rec;
    rec.id = r.i64();
    const std::size_t classes = r.count(16);
    for (std::size_t c = 0; c < classes; ++c) {
      const Label y = r.i64();
      const std::uint64_t n = r.u64();
      if (n == 0 || !rec.label_counts.emplace(y, n).second) {
        throw FormatError("task " + std::to_string(rec.id) + " has an invalid label count");
      }
    }
    if (classes == 0) {
      throw FormatError("task " + std::to_string(rec.id) + " has no labels");
    }
    rec.latent = LatentParams(cfg.dim, "task" + std::to_string(rec.id) + ".latent");
    assign(rec.latent.variance_pre, r.tensor());
    assign(rec.latent.correlation_pre, r.tensor());
    rec.state.count = r.u64();
    rec.state.sums = r.reals();
    if (rec.state.sums.size() != cfg.dim) {
      throw FormatError("task " + std::to_string(rec.id) + " state width mismatch");
    }
    const TaskId id = rec.id;
    if (!model.tasks().emplace(id, std::move(rec)).second) {
      throw FormatError("duplicate task " + std::to_string(id));
    }
  }

  for (CouplingLayer& layer : model.flow().layers()) {
    const std::uint64_t split = r.u64();
    const bool upper = r.u64() != 0;
    if (split != layer.split || upper != layer.transform_upper) {
      throw FormatError("coupling layer layout does not match the header");
    }
    for (Parameter* p : layer.shift.parameters()) {
      assign(*p, r.tensor());
    }
    for (Parameter* p : layer.log_scale.parameters()) {
      assign(*p, r.tensor());
    }
  }

  EmbeddingTable& emb = model.flow().embeddings();
  if (r.u64() != emb.seed()) {
    throw FormatError("embedding seed does not match the model seed");
  }
  std::map<TaskId, std::size_t> task_rows;
  const std::size_t n_task_rows = r.count(16);
  for (std::size_t i = 0; i < n_task_rows; ++i) {
    const TaskId t = r.i64();
    task_rows[t] = r.u64();
  }
  std::map<std::pair<TaskId, Label>, std::size_t> label_rows;
  const std::size_t n_label_rows = r.count(24);
  for (std::size_t i = 0; i < n_label_rows; ++i) {
    const TaskId t = r.i64();
    const Label y = r.i64();
    label_rows[{t, y}] = r.u64();
  }
  Tensor task_values = r.tensor();
  Tensor label_values = r.tensor();
  for (const auto& [t, row] : task_rows) {
    if (row >= task_values.rows()) {
      throw FormatError("task embedding row out of range");
    }
  }
  for (const auto& [key, row] : label_rows) {
    if (row >= label_values.rows()) {
      throw FormatError("label embedding row out of range");
    }
  }
  try {
    emb.restore(std::move(task_rows), std::move(label_rows), std::move(task_values),
                std::move(label_values));
  } catch (const DimensionError& e) {
    throw FormatError(e.what());
  }
  if (!r.done()) {
    throw FormatError("unread bytes at the end of the model body");
  }

  for (const auto& [t, rec] : model.tasks()) {
    if (!emb.has_task(t)) {
      throw FormatError("task " + std::to_string(t) + " has no embedding");
    }
    for (const auto& [y, n] : rec.label_counts) {
      if (!emb.has_label(t, y)) {
        throw FormatError("task " + std::to_string(t) + " label " + std::to_string(y) +
                          " has no embedding");
      }
    }
  }
  return model;
}

std::uint64_t read_u64(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint64_t v = 0;
  std::memcpy(&v, bytes.data() + at, sizeof v);
  return v;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> serialize(const ClBrunoModel& model) {
  const std::vector<std::uint8_t> body = body_of(model);
  Writer w;
  w.bytes(kModelMagic, sizeof kModelMagic);
  w.u32(kModelFormatVersion);
  w.u64(body.size());
  w.bytes(body.data(), body.size());
  w.u64(fnv1a64(w.buffer()));
  return std::move(w.buffer());
}

ClBrunoModel deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kModelMagic ||
      std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) != 0) {
    throw MagicError("not a model file: bad magic bytes");
  }
  if (bytes.size() < kModelPreambleSize + kModelChecksumSize) {
    throw TruncationError("model file is truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  const std::uint64_t body_length = read_u64(bytes, 8);
  const std::size_t available = bytes.size() - kModelPreambleSize - kModelChecksumSize;
  if (body_length > available) {
    throw TruncationError("model file is truncated: body needs " + std::to_string(body_length) +
                          " bytes, " + std::to_string(available) + " present");
  }
  if (body_length < available) {
    throw FormatError("model file has trailing bytes");
  }
  const std::size_t payload = kModelPreambleSize + body_length;
  if (fnv1a64(bytes.first(payload)) != read_u64(bytes, payload)) {
    throw ChecksumError("model file checksum mismatch");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, sizeof version);
  if (version != kModelFormatVersion) {
    throw VersionError("unsupported model format version " + std::to_string(version));
  }
  return parse_body(bytes.subspan(kModelPreambleSize, body_length));
}

void save_model(const ClBrunoModel& model, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize(model);
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError("cannot write '" + tmp.string() + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw DataError("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("cannot replace '" + path + "': " + ec.message());
  }
}

ClBrunoModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open model '" + path + "'");
  }
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::uint64_t model_fingerprint(const ClBrunoModel& model) {
  const std::vector<std::uint8_t> bytes = serialize(model);
  return read_u64(bytes, bytes.size() - kModelChecksumSize);
}

}  // namespace clbruno
