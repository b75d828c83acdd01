#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lrlc/cost.hpp"
#include "lrlc/dynamic.hpp"

namespace lrlc {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;  // null for buffers (running statistics)
};

/// The classification template: a stack of spatial layers (one kind per
/// position), each followed by batch norm and relu, then global average
/// pooling and a linear head.
struct ModelConfig {
  std::size_t input_h = 28, input_w = 28, input_c = 1;
  std::size_t classes = 10;
  std::size_t channels = 64;
  std::size_t filter = 3;
  std::vector<LayerKind> kinds = {LayerKind::kConv, LayerKind::kConv, LayerKind::kConv};
  std::size_t rank = 1;            // lrlc / dynamic_lrlc positions
  bool full_weights = false;       // non-factorized combining-weights ablation
  DynamicNetShape gnet;
};

/// Expands (kind, placement) into per-position kinds; non-placed positions
/// stay convolutional.
inline std::vector<LayerKind> kinds_from_placement(LayerKind kind, const std::string& placement,
                                                   std::size_t layers) {
  std::vector<LayerKind> kinds(layers, LayerKind::kConv);
  if (placement == "all" || kind == LayerKind::kConv) {
    for (auto& k : kinds) k = kind;
    return kinds;
  }
  std::size_t pos = 0;
  if (placement == "first")
    pos = 0;
  else if (placement == "second")
    pos = 1;
  else if (placement == "third")
    pos = 2;
  else
    throw ConfigError("placement must be first|second|third|all, got \"" + placement + "\"");
  require<ConfigError>(pos < layers, "placement \"", placement, "\" needs at least ", pos + 1,
                       " layers, model has ", layers);
  kinds[pos] = kind;
  return kinds;
}

/// One spatial layer in the stack. Forward caches whatever its backward
/// needs; instances are owned by a single training thread.
template <typename T>
class Block {
 public:
  virtual ~Block() = default;
  virtual const char* kind_name() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dout, bool need_dx) = 0;
  virtual void params(std::vector<ParamRef<T>>& out, const std::string& prefix) = 0;
  virtual std::unique_ptr<Block<T>> clone() const = 0;
  /// Inference-lowered replacement, or null when the block is unchanged.
  virtual std::unique_ptr<Block<T>> lowered() const { return nullptr; }
};

template <typename T>
class ConvBlock final : public Block<T> {
 public:
  ConvBlock(std::size_t filter, std::size_t cin, std::size_t cout, Rng& rng)
      : layer_(make_conv<T>(filter, filter, cin, cout, rng)),
        dfilters_(layer_.filters.shape()),
        dbias_(layer_.bias.shape()) {}

  const char* kind_name() const override { return "conv"; }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    if (training) x_ = x;
    return conv2d_forward(x, layer_);
  }

  Tensor<T> backward(const Tensor<T>& dout, bool need_dx) override {
    ConvGrads<T> g = conv2d_backward(x_, layer_.filters, dout, need_dx);
    dfilters_ = std::move(g.filters);
    dbias_ = std::move(g.bias);
    return need_dx ? std::move(g.input) : Tensor<T>{};
  }

  void params(std::vector<ParamRef<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".filters", &layer_.filters, &dfilters_});
    out.push_back({prefix + ".bias", &layer_.bias, &dbias_});
  }

  std::unique_ptr<Block<T>> clone() const override { return std::make_unique<ConvBlock>(*this); }

  ConvLayer<T>& layer() { return layer_; }

 private:
  ConvLayer<T> layer_;
  Tensor<T> dfilters_, dbias_, x_;
};

template <typename T>
class CoordConvBlock final : public Block<T> {
 public:
  CoordConvBlock(std::size_t filter, std::size_t cin, std::size_t cout, Rng& rng)
      : layer_(make_conv<T>(filter, filter, cin + 2, cout, rng)),
        dfilters_(layer_.filters.shape()),
        dbias_(layer_.bias.shape()) {}

  const char* kind_name() const override { return "coordconv"; }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    Tensor<T> aug = coordconv_augment(x);
    if (training) aug_ = aug;
    return conv2d_forward(aug, layer_);
  }

  Tensor<T> backward(const Tensor<T>& dout, bool need_dx) override {
    ConvGrads<T> g = conv2d_backward(aug_, layer_.filters, dout, need_dx);
    dfilters_ = std::move(g.filters);
    dbias_ = std::move(g.bias);
    return need_dx ? coordconv_backward(g.input) : Tensor<T>{};
  }

  void params(std::vector<ParamRef<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".filters", &layer_.filters, &dfilters_});
    out.push_back({prefix + ".bias", &layer_.bias, &dbias_});
  }

  std::unique_ptr<Block<T>> clone() const override {
    return std::make_unique<CoordConvBlock>(*this);
  }

 private:
  ConvLayer<T> layer_;
  Tensor<T> dfilters_, dbias_, aug_;
};

template <typename T>
class LocalBlock final : public Block<T> {
 public:
  LocalBlock(std::size_t H, std::size_t W, std::size_t filter, std::size_t cin, std::size_t cout,
             Rng& rng)
      : layer_(make_local<T>(H, W, filter, filter, cin, cout, rng)),
        dfilters_(layer_.filters.shape()),
        dbias_(layer_.bias.shape()) {}

  const char* kind_name() const override { return "local"; }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    if (training) x_ = x;
    return local_forward(x, layer_);
  }

  Tensor<T> backward(const Tensor<T>& dout, bool need_dx) override {
    LocalGrads<T> g = local_backward(x_, layer_, dout, need_dx);
    dfilters_ = std::move(g.filters);
    dbias_ = std::move(g.bias);
    return need_dx ? std::move(g.input) : Tensor<T>{};
  }

  void params(std::vector<ParamRef<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".filters", &layer_.filters, &dfilters_});
    out.push_back({prefix + ".bias", &layer_.bias, &dbias_});
  }

  std::unique_ptr<Block<T>> clone() const override { return std::make_unique<LocalBlock>(*this); }

 private:
  LocalLayer<T> layer_;
  Tensor<T> dfilters_, dbias_, x_;
};

template <typename T>
class LoweredLrlcBlock final : public Block<T> {
 public:
  explicit LoweredLrlcBlock(LoweredLrlc<T> lowered) : lowered_(std::move(lowered)) {}

  const char* kind_name() const override { return "lowered_lrlc"; }

  Tensor<T> forward(const Tensor<T>& x, bool) override { return lowered_forward(x, lowered_); }

  Tensor<T> backward(const Tensor<T>&, bool) override {
    throw UnsupportedError("lowered lrlc blocks are inference-only");
  }

  void params(std::vector<ParamRef<T>>& out, const std::string& prefix) override {
    // Inference-only: tensors are persisted but not trainable (no grads).
    out.push_back({prefix + ".filters", &lowered_.local.filters, nullptr});
    out.push_back({prefix + ".bias_row", &lowered_.bias.row, nullptr});
    out.push_back({prefix + ".bias_col", &lowered_.bias.col, nullptr});
    out.push_back({prefix + ".bias_channel", &lowered_.bias.channel, nullptr});
  }

  std::unique_ptr<Block<T>> clone() const override {
    return std::make_unique<LoweredLrlcBlock>(*this);
  }

  LoweredLrlc<T>& lowered() { return lowered_; }

 private:
  LoweredLrlc<T> lowered_;
};

template <typename T>
class LrlcBlock final : public Block<T> {
 public:
  LrlcBlock(std::size_t H, std::size_t W, std::size_t filter, std::size_t cin, std::size_t cout,
            std::size_t K, WeightsMode mode, Rng& rng)
      : layer_(make_lrlc<T>(H, W, filter, filter, cin, cout, K, rng, mode)) {
    alloc_grads();
  }

  const char* kind_name() const override { return "lrlc"; }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    if (!training) return lrlc_forward(x, layer_);
    x_ = x;
    return lrlc_forward(x, layer_, &cache_);
  }

  Tensor<T> backward(const Tensor<T>& dout, bool need_dx) override {
    LrlcGrads<T> g = lrlc_backward(x_, layer_, cache_, dout, need_dx);
    dbanks_ = std::move(g.banks);
    if (layer_.weights.mode == WeightsMode::kFactorized) {
      dalpha_ = std::move(g.alpha);
      dbeta_ = std::move(g.beta);
    } else {
      dtable_ = std::move(g.table);
    }
    dbias_ = std::move(g.bias);
    return need_dx ? std::move(g.input) : Tensor<T>{};
  }

  void params(std::vector<ParamRef<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".banks", &layer_.basis.banks, &dbanks_});
    if (layer_.weights.mode == WeightsMode::kFactorized) {
      out.push_back({prefix + ".alpha", &layer_.weights.alpha, &dalpha_});
      out.push_back({prefix + ".beta", &layer_.weights.beta, &dbeta_});
    } else {
      out.push_back({prefix + ".table", &layer_.weights.table, &dtable_});
    }
    out.push_back({prefix + ".bias_row", &layer_.bias.row, &dbias_.row});
    out.push_back({prefix + ".bias_col", &layer_.bias.col, &dbias_.col});
    out.push_back({prefix + ".bias_channel", &layer_.bias.channel, &dbias_.channel});
  }

  std::unique_ptr<Block<T>> clone() const override { return std::make_unique<LrlcBlock>(*this); }

  std::unique_ptr<Block<T>> lowered() const override {
    return std::make_unique<LoweredLrlcBlock<T>>(lower_to_local(layer_));
  }

  LrlcLayer<T>& layer() { return layer_; }
  const LrlcLayer<T>& layer() const { return layer_; }

 private:
  void alloc_grads() {
    dbanks_ = Tensor<T>(layer_.basis.banks.shape());
    if (layer_.weights.mode == WeightsMode::kFactorized) {
      dalpha_ = Tensor<T>(layer_.weights.alpha.shape());
      dbeta_ = Tensor<T>(layer_.weights.beta.shape());
    } else {
      dtable_ = Tensor<T>(layer_.weights.table.shape());
    }
    dbias_ = SpatialBias<T>{Tensor<T>(layer_.bias.row.shape()), Tensor<T>(layer_.bias.col.shape()),
                            Tensor<T>(layer_.bias.channel.shape())};
  }

  LrlcLayer<T> layer_;
  Tensor<T> dbanks_, dalpha_, dbeta_, dtable_;
  SpatialBias<T> dbias_;
  LrlcCache<T> cache_;
  Tensor<T> x_;
};

template <typename T>
class DynamicLrlcBlock final : public Block<T> {
 public:
  DynamicLrlcBlock(std::size_t H, std::size_t W, std::size_t filter, std::size_t cin,
                   std::size_t cout, std::size_t K, const DynamicNetShape& shape, Rng& rng)
      : layer_(make_dynamic_lrlc<T>(H, W, filter, filter, cin, cout, K, shape, rng)) {
    alloc_grads();
  }

  const char* kind_name() const override { return "dynamic_lrlc"; }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    if (!training) return dynamic_lrlc_forward(x, layer_);
    x_ = x;
    return dynamic_lrlc_forward(x, layer_, &cache_);
  }

  Tensor<T> backward(const Tensor<T>& dout, bool need_dx) override {
    DynamicLrlcGrads<T> g = dynamic_lrlc_backward(x_, layer_, cache_, dout, need_dx);
    dbanks_ = std::move(g.banks);
    // assign field by field: parameter refs hold addresses of these tensors
    // (including elements of the branch vectors), which must stay stable
    dnet_.proj_filters = std::move(g.net.proj_filters);
    dnet_.proj_bias = std::move(g.net.proj_bias);
    for (std::size_t b = 0; b < dnet_.branch_filters.size(); ++b) {
      dnet_.branch_filters[b] = std::move(g.net.branch_filters[b]);
      dnet_.branch_bias[b] = std::move(g.net.branch_bias[b]);
    }
    dnet_.bottleneck_filters = std::move(g.net.bottleneck_filters);
    dnet_.bottleneck_bias = std::move(g.net.bottleneck_bias);
    dnet_.expansion_filters = std::move(g.net.expansion_filters);
    dnet_.expansion_bias = std::move(g.net.expansion_bias);
    dnet_.head_filters = std::move(g.net.head_filters);
    dnet_.head_bias = std::move(g.net.head_bias);
    dbias_ = std::move(g.bias);
    return need_dx ? std::move(g.input) : Tensor<T>{};
  }

  void params(std::vector<ParamRef<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + ".banks", &layer_.basis.banks, &dbanks_});
    out.push_back({prefix + ".net.proj_filters", &layer_.net.proj_filters, &dnet_.proj_filters});
    out.push_back({prefix + ".net.proj_bias", &layer_.net.proj_bias, &dnet_.proj_bias});
    for (std::size_t b = 0; b < layer_.net.branches.size(); ++b) {
      const std::string bp = prefix + ".net.branch" + std::to_string(b);
      out.push_back({bp + ".filters", &layer_.net.branches[b].filters, &dnet_.branch_filters[b]});
      out.push_back({bp + ".bias", &layer_.net.branches[b].bias, &dnet_.branch_bias[b]});
    }
    out.push_back({prefix + ".net.bottleneck_filters", &layer_.net.bottleneck_filters,
                   &dnet_.bottleneck_filters});
    out.push_back({prefix + ".net.bottleneck_bias", &layer_.net.bottleneck_bias,
                   &dnet_.bottleneck_bias});
    out.push_back({prefix + ".net.expansion_filters", &layer_.net.expansion_filters,
                   &dnet_.expansion_filters});
    out.push_back({prefix + ".net.expansion_bias", &layer_.net.expansion_bias,
                   &dnet_.expansion_bias});
    out.push_back({prefix + ".net.head_filters", &layer_.net.head_filters, &dnet_.head_filters});
    out.push_back({prefix + ".net.head_bias", &layer_.net.head_bias, &dnet_.head_bias});
    out.push_back({prefix + ".bias_row", &layer_.bias.row, &dbias_.row});
    out.push_back({prefix + ".bias_col", &layer_.bias.col, &dbias_.col});
    out.push_back({prefix + ".bias_channel", &layer_.bias.channel, &dbias_.channel});
  }

  std::unique_ptr<Block<T>> clone() const override {
    return std::make_unique<DynamicLrlcBlock>(*this);
  }

  DynamicLrlcLayer<T>& layer() { return layer_; }

 private:
  void alloc_grads() {
    dbanks_ = Tensor<T>(layer_.basis.banks.shape());
    dnet_.proj_filters = Tensor<T>(layer_.net.proj_filters.shape());
    dnet_.proj_bias = Tensor<T>(layer_.net.proj_bias.shape());
    dnet_.branch_filters.clear();
    dnet_.branch_bias.clear();
    for (const auto& br : layer_.net.branches) {
      dnet_.branch_filters.emplace_back(br.filters.shape());
      dnet_.branch_bias.emplace_back(br.bias.shape());
    }
    dnet_.bottleneck_filters = Tensor<T>(layer_.net.bottleneck_filters.shape());
    dnet_.bottleneck_bias = Tensor<T>(layer_.net.bottleneck_bias.shape());
    dnet_.expansion_filters = Tensor<T>(layer_.net.expansion_filters.shape());
    dnet_.expansion_bias = Tensor<T>(layer_.net.expansion_bias.shape());
    dnet_.head_filters = Tensor<T>(layer_.net.head_filters.shape());
    dnet_.head_bias = Tensor<T>(layer_.net.head_bias.shape());
    dbias_ = SpatialBias<T>{Tensor<T>(layer_.bias.row.shape()), Tensor<T>(layer_.bias.col.shape()),
                            Tensor<T>(layer_.bias.channel.shape())};
  }

  DynamicLrlcLayer<T> layer_;
  Tensor<T> dbanks_;
  DynamicNetGrads<T> dnet_;
  SpatialBias<T> dbias_;
  DynamicLrlcCache<T> cache_;
  Tensor<T> x_;
};

/// The full classifier. Single-writer: forward/backward/step from one thread.
template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    Rng rng(init_seed);
    build(rng);
  }

  Model(const Model& other) : cfg_(other.cfg_), head_(other.head_) {
    units_.reserve(other.units_.size());
    for (const auto& u : other.units_) {
      Unit copy;
      copy.block = u.block->clone();
      copy.bn = u.bn;
      copy.dgamma = Tensor<T>(u.bn.gamma.shape());
      copy.dbeta = Tensor<T>(u.bn.beta.shape());
      units_.push_back(std::move(copy));
    }
    alloc_head_grads();
  }
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  std::size_t depth() const { return units_.size(); }
  Block<T>& block(std::size_t i) { return *units_[i].block; }
  BatchNormState<T>& batchnorm(std::size_t i) { return units_[i].bn; }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> h = x;
    for (auto& u : units_) {
      h = u.block->forward(h, training);
      if (training) {
        h = batchnorm_forward(h, u.bn, BnMode::kTrain, &u.bn_cache);
        u.relu_in = h;
      } else {
        h = batchnorm_forward(h, u.bn, BnMode::kInference);
      }
      h = relu(h);
    }
    spatial_h_ = h.extent(1);
    spatial_w_ = h.extent(2);
    Tensor<T> pooled = global_avg_pool(h);
    if (training) pooled_ = pooled;
    return dense_forward(pooled, head_);
  }

  void backward(const Tensor<T>& dlogits) {
    DenseGrads<T> hg = dense_backward(pooled_, head_, dlogits);
    dhead_weights_ = std::move(hg.weights);
    dhead_bias_ = std::move(hg.bias);
    Tensor<T> dh = global_avg_pool_backward(hg.input, spatial_h_, spatial_w_);
    for (std::size_t i = units_.size(); i-- > 0;) {
      auto& u = units_[i];
      dh = relu_backward(u.relu_in, dh);
      BnGrads<T> bg = batchnorm_backward(u.bn, u.bn_cache, dh);
      u.dgamma = std::move(bg.gamma);
      u.dbeta = std::move(bg.beta);
      dh = u.block->backward(bg.input, /*need_dx=*/i > 0);
    }
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < units_.size(); ++i) {
      const std::string prefix = "layer" + std::to_string(i);
      units_[i].block->params(out, prefix);
      out.push_back({prefix + ".bn.gamma", &units_[i].bn.gamma, &units_[i].dgamma});
      out.push_back({prefix + ".bn.beta", &units_[i].bn.beta, &units_[i].dbeta});
    }
    out.push_back({"head.weights", &head_.weights, &dhead_weights_});
    out.push_back({"head.bias", &head_.bias, &dhead_bias_});
    return out;
  }

  /// Non-trainable persisted state (batch norm running statistics).
  std::vector<ParamRef<T>> buffers() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < units_.size(); ++i) {
      const std::string prefix = "layer" + std::to_string(i);
      out.push_back({prefix + ".bn.running_mean", &units_[i].bn.running_mean, nullptr});
      out.push_back({prefix + ".bn.running_var", &units_[i].bn.running_var, nullptr});
    }
    return out;
  }

  /// Copy with every fixed-weight LRLC block materialized as a locally
  /// connected block. Throws UnsupportedError on dynamic blocks.
  Model lowered() const {
    Model copy(*this);
    for (auto& u : copy.units_) {
      if (std::string(u.block->kind_name()) == "dynamic_lrlc")
        throw UnsupportedError(
            "cannot lower dynamic lrlc: per-example filters cannot be pre-materialized");
      if (auto low = u.block->lowered()) u.block = std::move(low);
    }
    return copy;
  }

  /// Rebuilds a model whose block kinds come from a saved manifest; used by
  /// checkpoint loading (handles lowered_lrlc blocks, whose tensors are then
  /// overwritten by the loader).
  static Model from_kind_names(ModelConfig cfg, const std::vector<std::string>& names) {
    require<ConfigError>(names.size() == cfg.kinds.size(),
                         "checkpoint manifest kind count mismatch");
    std::vector<bool> lowered(names.size(), false);
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == "lowered_lrlc") {
        cfg.kinds[i] = LayerKind::kLrlc;
        lowered[i] = true;
      } else {
        cfg.kinds[i] = layer_kind_from_name(names[i]);
      }
    }
    Model m(cfg, /*init_seed=*/0);
    for (std::size_t i = 0; i < names.size(); ++i)
      if (lowered[i]) m.units_[i].block = m.units_[i].block->lowered();
    return m;
  }

 private:
  struct Unit {
    std::unique_ptr<Block<T>> block;
    BatchNormState<T> bn;
    BnCache<T> bn_cache;
    Tensor<T> relu_in;
    Tensor<T> dgamma, dbeta;
  };

  void build(Rng& rng) {
    require<ConfigError>(!cfg_.kinds.empty(), "model needs at least one layer");
    std::size_t cin = cfg_.input_c;
    for (LayerKind kind : cfg_.kinds) {
      units_.push_back(make_unit(kind, cin, rng));
      cin = cfg_.channels;
    }
    head_ = make_dense<T>(cfg_.channels, cfg_.classes, rng);
    alloc_head_grads();
  }

  Unit make_unit(LayerKind kind, std::size_t cin, Rng& rng) {
    Unit u;
    const std::size_t H = cfg_.input_h, W = cfg_.input_w, f = cfg_.filter, co = cfg_.channels;
    switch (kind) {
      case LayerKind::kConv:
        u.block = std::make_unique<ConvBlock<T>>(f, cin, co, rng);
        break;
      case LayerKind::kCoordConv:
        u.block = std::make_unique<CoordConvBlock<T>>(f, cin, co, rng);
        break;
      case LayerKind::kLocal:
        u.block = std::make_unique<LocalBlock<T>>(H, W, f, cin, co, rng);
        break;
      case LayerKind::kLrlc:
        u.block = std::make_unique<LrlcBlock<T>>(
            H, W, f, cin, co, cfg_.rank,
            cfg_.full_weights ? WeightsMode::kFull : WeightsMode::kFactorized, rng);
        break;
      case LayerKind::kDynamicLrlc:
        u.block = std::make_unique<DynamicLrlcBlock<T>>(H, W, f, cin, co, cfg_.rank, cfg_.gnet,
                                                        rng);
        break;
    }
    u.bn = make_batchnorm<T>(co);
    u.dgamma = Tensor<T>({co});
    u.dbeta = Tensor<T>({co});
    return u;
  }

  void alloc_head_grads() {
    dhead_weights_ = Tensor<T>(head_.weights.shape());
    dhead_bias_ = Tensor<T>(head_.bias.shape());
  }

  ModelConfig cfg_;
  std::vector<Unit> units_;
  DenseLayer<T> head_;
  Tensor<T> dhead_weights_, dhead_bias_, pooled_;
  std::size_t spatial_h_ = 0, spatial_w_ = 0;
};

}  // namespace lrlc
