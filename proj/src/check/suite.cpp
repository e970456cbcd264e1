#include "sfae/check_suite.hpp"

#include <functional>
#include <map>

#include "sfae/enhancer_net.hpp"
#include "sfae/freq_decomp.hpp"
#include "sfae/ops.hpp"
#include "sfae/pipeline.hpp"
#include "sfae/random.hpp"
#include "sfae/train.hpp"

namespace sfae::check {

namespace {

using ad::Tensor;
using Inputs = std::vector<Tensor>;

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  Tensor rand(ad::Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = rng_.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), true);
  }

  // Weighted sum with fixed random weights, so every output entry matters.
  Tensor probe(const Tensor& out) {
    auto it = probes_.find(out.shape());
    if (it == probes_.end()) {
      Tensor w = rand(out.shape());
      w.set_requires_grad(false);
      it = probes_.emplace(out.shape(), w).first;
    }
    return ad::sum(ad::mul(out, it->second));
  }

  void add(const std::string& name, const std::function<Tensor(const Inputs&)>& f, const Inputs& inputs,
           ad::GradcheckOptions opt = {}) {
    opt.seed = rng_.next_u64();
    reports_.push_back(ad::gradcheck(name, f, inputs, opt));
  }

  std::vector<ad::GradcheckReport>& reports() { return reports_; }

 private:
  Rng rng_;
  std::map<ad::Shape, Tensor> probes_;
  std::vector<ad::GradcheckReport> reports_;
};

void op_checks(Suite& s) {
  auto pr = [&s](const Tensor& t) { return s.probe(t); };
  s.add("add_broadcast", [&](const Inputs& in) { return pr(ad::add(in[0], in[1])); }, {s.rand({2, 3, 4}), s.rand({3, 1})});
  s.add("sub_broadcast", [&](const Inputs& in) { return pr(ad::sub(in[0], in[1])); }, {s.rand({2, 3, 4}), s.rand({4})});
  s.add("mul_broadcast", [&](const Inputs& in) { return pr(ad::mul(in[0], in[1])); }, {s.rand({2, 3, 4}), s.rand({2, 1, 4})});
  s.add("div", [&](const Inputs& in) { return pr(ad::div(in[0], in[1])); }, {s.rand({3, 4}), s.rand({3, 4}, 0.5, 2.0)});
  s.add("pow_tensor", [&](const Inputs& in) { return pr(ad::pow(in[0], in[1])); },
        {s.rand({3, 4}, 0.2, 2.0), s.rand({3, 4}, -1.5, 2.5)});
  s.add("pow_scalar", [&](const Inputs& in) { return pr(ad::pow(in[0], 3.0)); }, {s.rand({3, 4})});
  s.add("abs", [&](const Inputs& in) { return pr(ad::abs(in[0])); }, {s.rand({3, 4})});
  s.add("clamp", [&](const Inputs& in) { return pr(ad::clamp(in[0], -0.5, 0.5)); }, {s.rand({3, 4})});
  s.add("exp", [&](const Inputs& in) { return pr(ad::exp(in[0])); }, {s.rand({3, 4})});
  s.add("log", [&](const Inputs& in) { return pr(ad::log(in[0])); }, {s.rand({3, 4}, 0.1, 3.0)});
  s.add("selu", [&](const Inputs& in) { return pr(ad::selu(in[0])); }, {s.rand({3, 4})});
  s.add("sigmoid", [&](const Inputs& in) { return pr(ad::sigmoid(in[0])); }, {s.rand({3, 4}, -3, 3)});
  s.add("tanh", [&](const Inputs& in) { return pr(ad::tanh(in[0])); }, {s.rand({3, 4}, -3, 3)});
  s.add("softmax", [&](const Inputs& in) { return pr(ad::softmax(in[0])); }, {s.rand({2, 3, 5}, -2, 2)});
  s.add("matmul_batched", [&](const Inputs& in) { return pr(ad::matmul(in[0], in[1])); },
        {s.rand({2, 3, 4}), s.rand({4, 5})});
  s.add("linear", [&](const Inputs& in) { return pr(ad::linear(in[0], in[1], in[2])); },
        {s.rand({2, 3, 4}), s.rand({4, 5}), s.rand({5})});
  s.add("conv2d", [&](const Inputs& in) { return pr(ad::conv2d(in[0], in[1], in[2], {.stride = 1, .padding = 1})); },
        {s.rand({2, 3, 6, 6}), s.rand({4, 3, 3, 3}), s.rand({4})});
  s.add("conv2d_stride2_grouped",
        [&](const Inputs& in) { return pr(ad::conv2d(in[0], in[1], Tensor(), {.stride = 2, .padding = 1, .groups = 2})); },
        {s.rand({1, 4, 7, 6}), s.rand({4, 2, 3, 3})});
  s.add("instance_norm", [&](const Inputs& in) { return pr(ad::instance_norm(in[0], in[1], in[2])); },
        {s.rand({2, 3, 4, 4}), s.rand({3}), s.rand({3})});
  s.add("layer_norm", [&](const Inputs& in) { return pr(ad::layer_norm(in[0], in[1], in[2])); },
        {s.rand({2, 3, 6}), s.rand({6}), s.rand({6})});
  s.add("sum_dims", [&](const Inputs& in) { return pr(ad::sum(in[0], {1, 3}, true)); }, {s.rand({2, 3, 4, 5})});
  s.add("mean_dims", [&](const Inputs& in) { return pr(ad::mean(in[0], {0, 2})); }, {s.rand({2, 3, 4, 5})});
  s.add("max_dims", [&](const Inputs& in) { return pr(ad::max(in[0], {2, 3}, true)); }, {s.rand({2, 3, 4, 5})});
  s.add("reshape_permute", [&](const Inputs& in) { return pr(ad::permute(ad::reshape(in[0], {4, 6}), {1, 0})); },
        {s.rand({2, 3, 4})});
  s.add("concat_slice",
        [&](const Inputs& in) { return pr(ad::slice(ad::concat({in[0], in[1]}, 1), 1, 1, 4)); },
        {s.rand({2, 3, 2}), s.rand({2, 2, 2})});
  s.add("safe_pow", [&](const Inputs& in) { return pr(pipeline::safe_pow(in[0], in[1])); },
        {s.rand({2, 3, 4, 4}), s.rand({2, 3, 1, 1}, 0.3, 3.0)});
  s.add("soft_entropy", [&](const Inputs& in) { return train::soft_entropy(in[0]); }, {s.rand({2, 1, 4, 4}, 0.02, 0.98)});
}

void network_checks(Suite& s, std::size_t entries) {
  net::NetConfig c;
  c.n_bands = 4;
  c.height = c.width = 16;
  const net::NetParams p = net::init_params(c, 7, net::InitMode::kRandomAll);
  const std::size_t d = c.d_model();
  auto pr = [&s](const Tensor& t) { return s.probe(t); };
  auto params_of = [](std::vector<std::pair<std::string, Tensor>> named, Inputs extra) {
    for (auto& [name, t] : named) extra.push_back(t);
    return extra;
  };
  // Attention key biases have an exactly zero gradient; the larger floor
  // keeps their roundoff-level central differences from reading as error.
  const ad::GradcheckOptions sampled{.denominator_floor = 1e-4, .max_entries_per_input = entries};

  const Tensor feat = s.rand({1, d, 4, 4});
  {
    const net::CbamParams& cp = p.spatial[1].cbam;
    s.add("cbam", [&](const Inputs& in) { return pr(net::cbam(in[0], cp)); },
          {feat, cp.fc1.weight, cp.fc1.bias, cp.fc2.weight, cp.fc2.bias, cp.spatial.weight, cp.spatial.bias}, sampled);
  }
  {
    const Tensor x = s.rand({1, d, 8, 8});
    const net::ResBlockParams& rp = p.spatial[1];
    s.add("cbam_resblock", [&](const Inputs& in) { return pr(net::cbam_resblock(in[0], rp)); },
          {x, rp.conv1.weight, rp.norm1.gamma, rp.conv2.weight, rp.norm2.beta, rp.skip.weight, rp.skip.bias}, sampled);
  }
  {
    const Tensor q = s.rand({1, d, 2, 2}), kv = s.rand({1, d, 2, 2});
    const net::MhaParams& mp = p.fusion.attn_spa;
    s.add("mha", [&](const Inputs& in) { return pr(net::mha(in[0], in[1], in[1], mp, c.mha_heads).out); },
          {q, kv, mp.q.weight, mp.k.weight, mp.k.bias, mp.v.weight, mp.out.weight}, sampled);
  }
  {
    const Tensor a = s.rand({1, d, 2, 2}), b = s.rand({1, d, 2, 2});
    s.add("cross_fusion",
          [&](const Inputs& in) {
            const net::Fused f = net::cross_fusion(in[0], in[1], p.fusion, c.mha_heads);
            return ad::add(pr(f.z_spa), pr(ad::mul(f.z_freq, 0.5)));
          },
          {a, b}, sampled);
  }
  {
    const Tensor a = s.rand({1, d, 2, 2}), b = s.rand({1, d, 2, 2});
    s.add("gamma_heads",
          [&](const Inputs& in) {
            const net::GammaParams g = net::gamma_heads(in[0], in[1], p, c);
            return ad::add(pr(g.gamma_orig), pr(g.gamma_freq));
          },
          {a, b, p.head_orig.fc1.weight, p.head_orig.fc2.weight, p.head_freq.fc1.bias, p.head_freq.fc2.weight},
          sampled);
  }
  {
    const Tensor image = s.rand({1, 4, 16, 16}, 0.01, 1.0);
    const Tensor bands = freq::decompose(image.detach(), freq::band_boundaries(c.n_bands)).concatenated();
    s.add("full_network",
          [&](const Inputs& in) { return pr(pipeline::enhance_with_bands(in[0], bands, p, c).enhanced); },
          params_of(p.named(), {image}), sampled);
  }
}

}  // namespace

std::vector<ad::GradcheckReport> gradcheck_suite(const SuiteOptions& options) {
  Suite s(options.seed);
  op_checks(s);
  if (options.include_network) network_checks(s, options.network_entries);
  return std::move(s.reports());
}

}  // namespace sfae::check
