#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "eslab/common.hpp"
#include "eslab/tensor.hpp"

namespace eslab {

enum class LayerKind : uint32_t { dense = 0, conv2d = 1, relu = 2, tanh = 3, flatten = 4, maxpool2d = 5 };

/// One layer of a feed-forward stack. args per kind:
///   dense:     {in, out}
///   conv2d:    {in_ch, out_ch, kernel, stride, padding}
///   maxpool2d: {kernel, stride}
///   relu / tanh / flatten: {}
struct LayerSpec {
  LayerKind kind;
  std::vector<int64_t> args;

  static LayerSpec dense(int64_t in, int64_t out) { return {LayerKind::dense, {in, out}}; }
  static LayerSpec conv(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride = 1,
                        int64_t padding = 0) {
    return {LayerKind::conv2d, {in_ch, out_ch, kernel, stride, padding}};
  }
  static LayerSpec relu() { return {LayerKind::relu, {}}; }
  static LayerSpec tanh() { return {LayerKind::tanh, {}}; }
  static LayerSpec flatten() { return {LayerKind::flatten, {}}; }
  static LayerSpec maxpool(int64_t kernel, int64_t stride) {
    return {LayerKind::maxpool2d, {kernel, stride}};
  }

  bool operator==(const LayerSpec&) const = default;
};

namespace detail {

// Per-sample shape after applying one layer; throws on incompatibility.
inline Shape layer_out_shape(const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::dense:
      if (in.size() != 1 || in[0] != l.args[0])
        throw std::invalid_argument("network build: dense(" + std::to_string(l.args[0]) +
                                    ") cannot follow shape " + shape_str(in));
      return {l.args[1]};
    case LayerKind::conv2d: {
      if (in.size() != 3 || in[0] != l.args[0])
        throw std::invalid_argument("network build: conv2d expects [c,h,w] with c=" +
                                    std::to_string(l.args[0]) + ", got " + shape_str(in));
      const int64_t k = l.args[2], s = l.args[3], p = l.args[4];
      if (k > in[1] + 2 * p || k > in[2] + 2 * p)
        throw std::invalid_argument("network build: conv kernel larger than padded input");
      return {l.args[1], (in[1] + 2 * p - k) / s + 1, (in[2] + 2 * p - k) / s + 1};
    }
    case LayerKind::maxpool2d: {
      if (in.size() != 3) throw std::invalid_argument("network build: maxpool expects [c,h,w]");
      const int64_t k = l.args[0], s = l.args[1];
      if (k > in[1] || k > in[2])
        throw std::invalid_argument("network build: pool kernel larger than input");
      return {in[0], (in[1] - k) / s + 1, (in[2] - k) / s + 1};
    }
    case LayerKind::flatten: {
      int64_t n = 1;
      for (int64_t d : in) n *= d;
      return {n};
    }
    case LayerKind::relu:
    case LayerKind::tanh:
      return in;
  }
  throw std::logic_error("unknown layer kind");
}

}  // namespace detail

/// Ordered layer stack with named parameters. Forward yields [n, out_width]
/// where out_width is the class count for classifiers (or any width for
/// generator trunks). Parameters are shared handles: copies of a Network
/// alias the same weights; use clone() for an independent snapshot.
class Network {
 public:
  Network() = default;

  /// Builds the stack and initializes parameters (fan-in scaled Gaussian,
  /// zero biases), deterministically under seed.
  Network(Shape input_shape, std::vector<LayerSpec> layers, int64_t out_width, uint64_t seed)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)), out_width_(out_width) {
    Shape cur = input_shape_;
    Rng rng(seed);
    for (const auto& l : layers_) {
      Shape next = detail::layer_out_shape(l, cur);
      if (l.kind == LayerKind::dense) {
        double std = std::sqrt(2.0 / static_cast<double>(l.args[0]));
        params_.push_back(Tensor::randn({l.args[0], l.args[1]}, rng, std).set_requires_grad(true));
        params_.push_back(Tensor::zeros({l.args[1]}).set_requires_grad(true));
      } else if (l.kind == LayerKind::conv2d) {
        const int64_t fan_in = l.args[0] * l.args[2] * l.args[2];
        double std = std::sqrt(2.0 / static_cast<double>(fan_in));
        params_.push_back(
            Tensor::randn({l.args[1], l.args[0], l.args[2], l.args[2]}, rng, std)
                .set_requires_grad(true));
        params_.push_back(Tensor::zeros({l.args[1]}).set_requires_grad(true));
      }
      cur = next;
    }
    if (cur.size() != 1 || cur[0] != out_width_)
      throw std::invalid_argument("network build: final shape " + shape_str(cur) +
                                  " does not match output width " + std::to_string(out_width_));
  }

  bool defined() const { return !layers_.empty(); }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  int64_t class_count() const { return out_width_; }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  /// Logits for a batch. x must be [n, ...input_shape]; recorded on the
  /// active tape when one is in scope.
  Tensor forward(const Tensor& x) const { return forward_upto(x, layers_.size()); }

  /// Activations entering layer `upto` (forward through layers [0, upto)).
  /// Output is flattened to [n, d].
  Tensor forward_features(const Tensor& x, size_t upto) const {
    return flatten(forward_upto(x, upto));
  }

  /// Index of the last dense layer; its input is "the layer before the
  /// last linear layer" used as the feature tap.
  size_t last_dense_layer() const {
    for (size_t i = layers_.size(); i-- > 0;)
      if (layers_[i].kind == LayerKind::dense) return i;
    throw std::logic_error("network has no dense layer");
  }

  /// Deep copy: independent parameter buffers, same architecture.
  Network clone() const {
    Network n;
    n.input_shape_ = input_shape_;
    n.layers_ = layers_;
    n.out_width_ = out_width_;
    for (const auto& p : params_) n.params_.push_back(p.clone().set_requires_grad(true));
    return n;
  }

  /// Copies parameter values from another network of identical architecture.
  void load_params_from(const Network& other) {
    if (other.layers_ != layers_)
      throw std::invalid_argument("load_params_from: architecture mismatch");
    for (size_t i = 0; i < params_.size(); ++i) params_[i].data() = other.params_[i].data();
  }

  void set_params_requires_grad(bool b) {
    for (auto& p : params_) p.set_requires_grad(b);
  }

 private:
  Tensor forward_upto(const Tensor& x, size_t upto) const {
    validate_batch(x);
    Tensor cur = x;
    size_t pi = 0;
    for (size_t i = 0; i < layers_.size() && i < upto; ++i) {
      const auto& l = layers_[i];
      switch (l.kind) {
        case LayerKind::dense:
          cur = add_rows(matmul(cur, params_[pi]), params_[pi + 1]);
          pi += 2;
          break;
        case LayerKind::conv2d:
          cur = conv2d(cur, params_[pi], params_[pi + 1], static_cast<int>(l.args[3]),
                       static_cast<int>(l.args[4]));
          pi += 2;
          break;
        case LayerKind::relu:
          cur = eslab::relu(cur);
          break;
        case LayerKind::tanh:
          cur = eslab::tanh(cur);
          break;
        case LayerKind::flatten:
          cur = eslab::flatten(cur);
          break;
        case LayerKind::maxpool2d:
          cur = maxpool2d(cur, static_cast<int>(l.args[0]), static_cast<int>(l.args[1]));
          break;
      }
    }
    return cur;
  }

  void validate_batch(const Tensor& x) const {
    bool ok = x.rank() == input_shape_.size() + 1;
    if (ok)
      for (size_t i = 0; i < input_shape_.size(); ++i)
        if (x.dim(i + 1) != input_shape_[i]) ok = false;
    if (!ok)
      throw std::invalid_argument("forward: batch shape " + shape_str(x.shape()) +
                                  " does not match input shape " + shape_str(input_shape_));
  }

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  int64_t out_width_ = 0;
  std::vector<Tensor> params_;
};

/// Freezes a network's parameters for the lifetime of the guard so tape
/// recording skips them (used while synthesizing data through a model).
/// Nests safely: restores whatever flags were set before.
class ParamFreeze {
 public:
  explicit ParamFreeze(const Network& net) : net_(const_cast<Network&>(net)) {
    for (auto& p : net_.params()) {
      prev_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~ParamFreeze() {
    for (size_t i = 0; i < prev_.size(); ++i) net_.params()[i].set_requires_grad(prev_[i]);
  }
  ParamFreeze(const ParamFreeze&) = delete;
  ParamFreeze& operator=(const ParamFreeze&) = delete;

 private:
  Network& net_;
  std::vector<bool> prev_;
};

// ---------------------------------------------------------------------------
// model zoo
// ---------------------------------------------------------------------------

/// Desk-scale architectures: "mlp-small" (64,64 hidden), "mlp-large"
/// (256,256), "cnn-small" (2 conv + 2 dense, image input), "linear".
inline Network make_model(const std::string& arch, const Shape& input_shape, int64_t k,
                          uint64_t seed) {
  int64_t flat = 1;
  for (int64_t d : input_shape) flat *= d;
  std::vector<LayerSpec> layers;
  auto mlp = [&](int64_t h) {
    if (input_shape.size() > 1) layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::dense(flat, h));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dense(h, h));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dense(h, k));
  };
  if (arch == "mlp-small") {
    mlp(64);
  } else if (arch == "mlp-large") {
    mlp(256);
  } else if (arch == "linear") {
    if (input_shape.size() > 1) layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::dense(flat, k));
  } else if (arch == "cnn-small") {
    if (input_shape.size() != 3)
      throw std::invalid_argument("cnn-small requires [c,h,w] input, got " +
                                  shape_str(input_shape));
    const int64_t c = input_shape[0];
    layers.push_back(LayerSpec::conv(c, 8, 3, 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool(2, 2));
    layers.push_back(LayerSpec::conv(8, 16, 3, 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool(2, 2));
    layers.push_back(LayerSpec::flatten());
    const int64_t fh = input_shape[1] / 4, fw = input_shape[2] / 4;
    layers.push_back(LayerSpec::dense(16 * fh * fw, 32));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dense(32, k));
  } else {
    throw std::invalid_argument("unknown architecture: " + arch);
  }
  return Network(input_shape, std::move(layers), k, seed);
}

// ---------------------------------------------------------------------------
// conditional generator
// ---------------------------------------------------------------------------

/// MLP conditional generator: concat [z ; one-hot label] -> hidden -> output,
/// final tanh keeps samples in (-1, 1). Output shape matches the victim's
/// input shape.
class GeneratorNetwork {
 public:
  GeneratorNetwork() = default;
  GeneratorNetwork(int64_t latent_dim, int64_t class_count, Shape output_shape,
                   int64_t hidden, uint64_t seed)
      : latent_dim_(latent_dim), class_count_(class_count), output_shape_(std::move(output_shape)) {
    int64_t out_flat = 1;
    for (int64_t d : output_shape_) out_flat *= d;
    std::vector<LayerSpec> layers = {
        LayerSpec::dense(latent_dim_ + class_count_, hidden),
        LayerSpec::relu(),
        LayerSpec::dense(hidden, out_flat),
        LayerSpec::tanh(),
    };
    trunk_ = Network({latent_dim_ + class_count_}, std::move(layers), out_flat, seed);
  }

  bool defined() const { return trunk_.defined(); }
  int64_t latent_dim() const { return latent_dim_; }
  int64_t class_count() const { return class_count_; }
  const Shape& output_shape() const { return output_shape_; }
  Network& trunk() { return trunk_; }
  const Network& trunk() const { return trunk_; }
  std::vector<Tensor>& params() { return trunk_.params(); }

  /// Samples for latent batch z [n, latent_dim] and one-hot labels [n, K].
  Tensor generate(const Tensor& z, const Tensor& labels) const {
    if (z.rank() != 2 || z.dim(1) != latent_dim_)
      throw std::invalid_argument("generate: z must be [n," + std::to_string(latent_dim_) + "]");
    if (labels.rank() != 2 || labels.dim(1) != class_count_ || labels.dim(0) != z.dim(0))
      throw std::invalid_argument("generate: labels must be [n,K] matching z");
    check_one_hot(labels);
    const int64_t n = z.dim(0);
    std::vector<double> joined(static_cast<size_t>(n * (latent_dim_ + class_count_)));
    for (int64_t i = 0; i < n; ++i) {
      std::memcpy(joined.data() + i * (latent_dim_ + class_count_), z.data().data() + i * latent_dim_,
                  latent_dim_ * sizeof(double));
      std::memcpy(joined.data() + i * (latent_dim_ + class_count_) + latent_dim_,
                  labels.data().data() + i * class_count_, class_count_ * sizeof(double));
    }
    Tensor input({n, latent_dim_ + class_count_}, std::move(joined));
    Tensor flat = trunk_.forward(input);
    Shape batched = output_shape_;
    batched.insert(batched.begin(), n);
    return reshape(flat, batched);
  }

  GeneratorNetwork clone() const {
    GeneratorNetwork g;
    g.latent_dim_ = latent_dim_;
    g.class_count_ = class_count_;
    g.output_shape_ = output_shape_;
    g.trunk_ = trunk_.clone();
    return g;
  }

 private:
  static void check_one_hot(const Tensor& labels) {
    const int64_t n = labels.dim(0), k = labels.dim(1);
    for (int64_t i = 0; i < n; ++i) {
      int ones = 0;
      for (int64_t j = 0; j < k; ++j) {
        const double v = labels.data()[i * k + j];
        if (v == 1.0)
          ++ones;
        else if (v != 0.0)
          throw std::domain_error("generate: labels must be one-hot rows");
      }
      if (ones != 1) throw std::domain_error("generate: labels must be one-hot rows");
    }
  }

  int64_t latent_dim_ = 0;
  int64_t class_count_ = 0;
  Shape output_shape_;
  Network trunk_;
};

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------
//
// Binary layout (little-endian):
//   magic "ESL1" | u32 version | u32 kind (0 classifier, 1 generator)
//   u32 class_count
//   kind 1 only: u32 latent_dim | shape(output)
//   shape(input) | u32 layer_count | per layer { u32 kind, u32 argc, i64 args[] }
//   u64 total_param_count | raw f64 parameter data, tensor by tensor
// where shape(s) = u32 rank | i64 dims[].

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
inline void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
inline void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }

inline uint32_t read_u32(std::istream& is, const char* what) {
  uint32_t v;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error(std::string("corrupt file: truncated ") + what);
  return v;
}
inline uint64_t read_u64(std::istream& is, const char* what) {
  uint64_t v;
  if (!is.read(reinterpret_cast<char*>(&v), 8))
    throw std::runtime_error(std::string("corrupt file: truncated ") + what);
  return v;
}
inline int64_t read_i64(std::istream& is, const char* what) {
  int64_t v;
  if (!is.read(reinterpret_cast<char*>(&v), 8))
    throw std::runtime_error(std::string("corrupt file: truncated ") + what);
  return v;
}

inline void write_shape(std::ostream& os, const Shape& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  for (int64_t d : s) write_i64(os, d);
}
inline Shape read_shape(std::istream& is, const char* what) {
  uint32_t rank = read_u32(is, what);
  if (rank > 8) throw std::runtime_error(std::string("corrupt file: absurd rank in ") + what);
  Shape s(rank);
  for (auto& d : s) d = read_i64(is, what);
  return s;
}

inline void write_layers(std::ostream& os, const std::vector<LayerSpec>& layers) {
  write_u32(os, static_cast<uint32_t>(layers.size()));
  for (const auto& l : layers) {
    write_u32(os, static_cast<uint32_t>(l.kind));
    write_u32(os, static_cast<uint32_t>(l.args.size()));
    for (int64_t a : l.args) write_i64(os, a);
  }
}
inline std::vector<LayerSpec> read_layers(std::istream& is) {
  uint32_t count = read_u32(is, "layer table");
  if (count > 1024) throw std::runtime_error("corrupt file: absurd layer count");
  std::vector<LayerSpec> layers(count);
  for (auto& l : layers) {
    uint32_t kind = read_u32(is, "layer table");
    if (kind > static_cast<uint32_t>(LayerKind::maxpool2d))
      throw std::runtime_error("corrupt file: unknown layer kind");
    l.kind = static_cast<LayerKind>(kind);
    uint32_t argc = read_u32(is, "layer table");
    if (argc > 16) throw std::runtime_error("corrupt file: absurd layer arg count");
    l.args.resize(argc);
    for (auto& a : l.args) a = read_i64(is, "layer table");
  }
  return layers;
}

inline void write_params(std::ostream& os, const std::vector<Tensor>& params) {
  uint64_t total = 0;
  for (const auto& p : params) total += p.data().size();
  write_u64(os, total);
  for (const auto& p : params)
    os.write(reinterpret_cast<const char*>(p.data().data()),
             static_cast<std::streamsize>(p.data().size() * sizeof(double)));
}
inline void read_params(std::istream& is, std::vector<Tensor>& params) {
  uint64_t total = read_u64(is, "parameter count");
  uint64_t expect = 0;
  for (const auto& p : params) expect += p.data().size();
  if (total != expect)
    throw std::runtime_error("corrupt file: parameter count does not match layer table");
  for (auto& p : params)
    if (!is.read(reinterpret_cast<char*>(p.data().data()),
                 static_cast<std::streamsize>(p.data().size() * sizeof(double))))
      throw std::runtime_error("corrupt file: truncated parameter data");
}

constexpr uint32_t kCheckpointVersion = 1;

inline void check_magic(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "ESL1", 4) != 0)
    throw std::runtime_error("corrupt file: bad checkpoint magic");
  uint32_t version = read_u32(is, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint version mismatch: " + std::to_string(version));
}

}  // namespace detail

inline void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("ESL1", 4);
  detail::write_u32(os, detail::kCheckpointVersion);
  detail::write_u32(os, 0);  // classifier
  detail::write_u32(os, static_cast<uint32_t>(net.class_count()));
  detail::write_shape(os, net.input_shape());
  detail::write_layers(os, net.layers());
  detail::write_params(os, net.params());
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Network load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  detail::check_magic(is);
  uint32_t kind = detail::read_u32(is, "kind");
  if (kind != 0) throw std::runtime_error("checkpoint holds a generator, not a classifier");
  uint32_t k = detail::read_u32(is, "class count");
  Shape input = detail::read_shape(is, "input shape");
  auto layers = detail::read_layers(is);
  Network net(input, layers, k, /*seed=*/0);
  detail::read_params(is, net.params());
  return net;
}

inline void save_generator_checkpoint(const GeneratorNetwork& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("ESL1", 4);
  detail::write_u32(os, detail::kCheckpointVersion);
  detail::write_u32(os, 1);  // generator
  detail::write_u32(os, static_cast<uint32_t>(g.class_count()));
  detail::write_u32(os, static_cast<uint32_t>(g.latent_dim()));
  detail::write_shape(os, g.output_shape());
  detail::write_shape(os, g.trunk().input_shape());
  detail::write_layers(os, g.trunk().layers());
  detail::write_params(os, g.trunk().params());
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline GeneratorNetwork load_generator_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  detail::check_magic(is);
  uint32_t kind = detail::read_u32(is, "kind");
  if (kind != 1) throw std::runtime_error("checkpoint holds a classifier, not a generator");
  uint32_t k = detail::read_u32(is, "class count");
  uint32_t latent = detail::read_u32(is, "latent dim");
  Shape output = detail::read_shape(is, "output shape");
  Shape input = detail::read_shape(is, "trunk input shape");
  auto layers = detail::read_layers(is);
  // hidden width is stored in the layer table; rebuild and overwrite params
  if (layers.size() < 1 || layers[0].kind != LayerKind::dense)
    throw std::runtime_error("corrupt file: generator trunk malformed");
  GeneratorNetwork g(latent, k, output, layers[0].args[1], /*seed=*/0);
  if (g.trunk().layers() != layers || g.trunk().input_shape() != input)
    throw std::runtime_error("corrupt file: generator layer table mismatch");
  detail::read_params(is, g.trunk().params());
  return g;
}

}  // namespace eslab
