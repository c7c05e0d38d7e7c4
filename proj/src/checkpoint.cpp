#include "heal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "heal/error.hpp"

namespace heal {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'H', 'E', 'A', 'L', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void doubles(std::span<const double> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }

  void section(const char (&tag)[5], const Writer& body) {
    raw(tag, 4);
    u64(body.out_.size());
    out_ += body.out_;
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  bool done() const { return pos_ == data_.size(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    if (n > remaining() / sizeof(double)) throw Error("checkpoint truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), take(n * sizeof(double)).data(), n * sizeof(double));
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    return std::string(take(n));
  }
  std::string_view take(std::size_t n) {
    if (n > remaining()) throw Error("checkpoint truncated");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::size_t remaining() const { return data_.size() - pos_; }
  template <class T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof v).data(), sizeof v);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

void write_matrix(Writer& w, const HypervectorMatrix& m) {
  w.u64(m.rows());
  w.u64(m.dim());
  w.doubles(m.re_data());
  w.doubles(m.im_data());
}

HypervectorMatrix read_matrix(Reader& r) {
  const std::size_t rows = r.u64(), dim = r.u64();
  HypervectorMatrix m(rows, dim);
  auto re = r.doubles();
  auto im = r.doubles();
  if (re.size() != rows * dim || im.size() != rows * dim) throw Error("checkpoint matrix size mismatch");
  std::copy(re.begin(), re.end(), m.re_data().begin());
  std::copy(im.begin(), im.end(), m.im_data().begin());
  return m;
}

}  // namespace

std::string serialize_ensemble(const Ensemble& ens) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);

  Writer shape;
  shape.u64(ens.shape.classes);
  shape.u64(ens.shape.dim);
  shape.u64(ens.shape.members);
  shape.u64(ens.shape.features);
  w.section("SHAP", shape);

  const auto& c = ens.config;
  Writer conf;
  conf.f64(c.learning_rate);
  conf.u64(c.max_epochs);
  conf.f64(c.target_train_accuracy);
  conf.u64(c.bootstrap ? 1 : 0);
  conf.str(to_string(c.prior_mode));
  conf.u64(c.seed);
  conf.f64(c.regen_fraction);
  conf.u64(c.regen_interval);
  conf.u64(c.workers);
  w.section("CONF", conf);

  Writer theta;
  theta.u64(ens.theta.features());
  theta.u64(ens.theta.dim());
  theta.u64(ens.theta.seed());
  theta.doubles(ens.theta.data());
  w.section("THTA", theta);

  Writer norm;
  norm.f64(ens.stats.bandwidth);
  norm.doubles(ens.stats.mean);
  norm.doubles(ens.stats.std);
  w.section("NORM", norm);

  Writer regen;
  regen.u64(ens.regen_events);
  w.section("REGN", regen);

  for (const auto& sub : ens.members) {
    Writer m;
    write_matrix(m, sub.model);
    write_matrix(m, sub.prior);
    w.section("MEMB", m);
  }
  return std::move(w.bytes());
}

Ensemble deserialize_ensemble(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic || std::memcmp(r.take(sizeof kMagic).data(), kMagic, sizeof kMagic) != 0)
    throw Error("not a checkpoint file");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(v));

  Ensemble ens;
  bool have_shape = false, have_theta = false;
  while (!r.done()) {
    const std::string tag(r.take(4));
    const std::uint64_t len = r.u64();
    Reader s(r.take(len));
    if (tag == "SHAP") {
      ens.shape.classes = s.u64();
      ens.shape.dim = s.u64();
      ens.shape.members = s.u64();
      ens.shape.features = s.u64();
      have_shape = true;
    } else if (tag == "CONF") {
      auto& c = ens.config;
      c.learning_rate = s.f64();
      c.max_epochs = s.u64();
      c.target_train_accuracy = s.f64();
      c.bootstrap = s.u64() != 0;
      c.prior_mode = parse_prior_mode(s.str());
      c.seed = s.u64();
      c.regen_fraction = s.f64();
      c.regen_interval = s.u64();
      c.workers = s.u64();
    } else if (tag == "THTA") {
      const std::size_t features = s.u64(), dim = s.u64();
      const std::uint64_t seed = s.u64();
      ens.theta = PhaseMatrix(features, dim, s.doubles(), seed);
      have_theta = true;
    } else if (tag == "NORM") {
      ens.stats.bandwidth = s.f64();
      ens.stats.mean = s.doubles();
      ens.stats.std = s.doubles();
    } else if (tag == "REGN") {
      ens.regen_events = s.u64();
    } else if (tag == "MEMB") {
      SubModel sub;
      sub.model = read_matrix(s);
      sub.prior = read_matrix(s);
      sub.refresh_all_norms();
      ens.members.push_back(std::move(sub));
    }
  }
  if (!have_shape || !have_theta || ens.members.size() != ens.shape.members)
    throw Error("checkpoint is missing sections");
  for (const auto& sub : ens.members)
    if (sub.model.rows() != ens.shape.classes || sub.model.dim() != ens.shape.dim)
      throw Error("checkpoint member shape mismatch");
  return ens;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const Ensemble& ensemble, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_ensemble(ensemble));
}

Ensemble load_checkpoint(const std::filesystem::path& path) {
  return deserialize_ensemble(read_file(path));
}

}  // namespace heal
