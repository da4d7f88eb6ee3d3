#include <cmath>

#include "hcvp/gradcheck.hpp"
#include "hcvp/losses.hpp"
#include "hcvp/model.hpp"
#include "hcvp/ops.hpp"

namespace hcvp {

namespace {

class Suite {
public:
    explicit Suite(std::uint64_t seed) : rng_(seed) {}

    std::size_t dim(std::size_t lo = 2, std::size_t hi = 4) { return lo + rng_.below(hi - lo + 1); }

    Tensor input(Shape shape, double lo = -1.0, double hi = 1.0) {
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = rng_.uniform(lo, hi);
        return Tensor::from(std::move(shape), std::move(v), true);
    }

    // Entries bounded away from zero, for ops with a kink at the origin.
    Tensor off_zero(Shape shape) {
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = (rng_.uniform() < 0.5 ? -1.0 : 1.0) * rng_.uniform(0.1, 1.0);
        return Tensor::from(std::move(shape), std::move(v), true);
    }

    // sum(out * W) with W fixed per call site, so every output entry matters.
    template <typename Fn>
    void check(const std::string& name, ParamList inputs, Fn&& fn) {
        Tensor probe = fn();
        std::vector<double> w(probe.numel());
        for (auto& x : w) x = rng_.uniform(-1.0, 1.0);
        Tensor weights = Tensor::from(probe.shape(), std::move(w));
        auto f = [&] { return sum(mul(fn(), weights)); };
        GradcheckOptions options;
        options.seed = rng_.next_u64();
        results_.push_back({name, gradcheck(f, inputs, options)});
    }

    std::vector<PrimitiveCheck> take() { return std::move(results_); }

private:
    Rng rng_;
    std::vector<PrimitiveCheck> results_;
};

} // namespace

std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed) {
    Suite s(seed);
    const std::size_t a = s.dim(), b = s.dim(), c = s.dim(), d = s.dim();

    {
        Tensor x = s.input({a, b, c, d}), y = s.input({c, d});
        s.check("add", {{"x", x}, {"y", y}}, [&] { return add(x, y); });
    }
    {
        Tensor x = s.input({a, b, c}), y = s.input({a, b, c});
        s.check("sub", {{"x", x}, {"y", y}}, [&] { return sub(x, y); });
    }
    {
        Tensor x = s.input({a, b, c, d}), y = s.input({a, b, c, d});
        s.check("mul", {{"x", x}, {"y", y}}, [&] { return mul(x, y); });
    }
    {
        Tensor x = s.input({a, b, c}), y = s.input({a, b, c}, 0.5, 2.0);
        s.check("div", {{"x", x}, {"y", y}}, [&] { return div(x, y); });
    }
    {
        Tensor x = s.input({a, b});
        s.check("scale", {{"x", x}}, [&] { return scale(x, -1.7); });
        s.check("add_scalar", {{"x", x}}, [&] { return add_scalar(x, 0.3); });
    }
    {
        Tensor x = s.off_zero({a, b, c, d});
        s.check("relu", {{"x", x}}, [&] { return relu(x); });
    }
    {
        Tensor x = s.input({a, b, c}, -3.0, 3.0);
        s.check("gelu", {{"x", x}}, [&] { return gelu(x); });
        s.check("exp", {{"x", x}}, [&] { return exp(x); });
    }
    {
        Tensor x = s.input({a, b, c}, 0.2, 3.0);
        s.check("log", {{"x", x}}, [&] { return log(x); });
    }
    {
        Tensor x = s.input({a, b, c, d}, -2.0, 2.0);
        s.check("softmax", {{"x", x}}, [&] { return softmax(x); });
        s.check("log_softmax", {{"x", x}}, [&] { return log_softmax(x); });
    }
    {
        Tensor x = s.input({a, 5}, -2.0, 2.0);
        std::vector<bool> keep(a * 5, true);
        for (std::size_t i = 0; i < a; ++i) keep[i * 5 + i % 5] = false;
        s.check("log_softmax_masked", {{"x", x}}, [&] { return log_softmax(x, keep); });
    }
    {
        Tensor x = s.input({a, b, 6}, -2.0, 2.0), g = s.input({6}, 0.5, 1.5), be = s.input({6});
        s.check("layer_norm", {{"x", x}, {"gamma", g}, {"beta", be}}, [&] { return layer_norm(x, g, be); });
    }
    {
        Tensor x = s.off_zero({a, 5});
        s.check("l2_normalize_rows", {{"x", x}}, [&] { return l2_normalize_rows(x); });
    }
    {
        Tensor x = s.input({a, b}), y = s.input({b, c});
        s.check("matmul", {{"a", x}, {"b", y}}, [&] { return matmul(x, y); });
    }
    {
        Tensor x = s.input({a, b, c}), y = s.input({a, c, d}), z = s.input({a, d, c});
        s.check("bmm", {{"a", x}, {"b", y}}, [&] { return bmm(x, y); });
        s.check("bmm_transposed", {{"a", x}, {"b", z}}, [&] { return bmm(x, z, true); });
    }
    {
        Tensor qkv = s.input({a, 5, 12}, -1.5, 1.5);
        s.check("multi_head_attention", {{"qkv", qkv}}, [&] { return multi_head_attention(qkv, 2); });
    }
    {
        Tensor x = s.input({a, b, c}), w = s.input({c, d}), bias = s.input({d});
        s.check("linear", {{"x", x}, {"weight", w}, {"bias", bias}}, [&] { return linear(x, w, bias); });
    }
    {
        Tensor x = s.input({a, 3, 6, 6}), k = s.input({b, 3, 3, 3});
        s.check("conv2d", {{"input", x}, {"kernel", k}}, [&] { return conv2d(x, k, 1, 1); });
        Tensor k2 = s.input({b, 3, 3, 3}), bias = s.input({b});
        s.check("conv2d_bias_stride2", {{"input", x}, {"kernel", k2}, {"bias", bias}},
                [&] { return conv2d(x, k2, bias, 2, 1); });
    }
    {
        Tensor x = s.input({a, b, c, d});
        s.check("global_avg_pool", {{"x", x}}, [&] { return global_avg_pool(x); });
        s.check("reshape", {{"x", x}}, [&] { return reshape(x, {a * b, c * d}); });
        s.check("permute", {{"x", x}}, [&] { return permute(x, {2, 0, 3, 1}); });
        s.check("slice", {{"x", x}}, [&] { return slice(x, 2, 1, c - 1); });
        s.check("sum", {{"x", x}}, [&] { return sum(x); });
        s.check("mean", {{"x", x}}, [&] { return mean(x); });
        s.check("sum_axis", {{"x", x}}, [&] { return sum_axis(x, 1); });
        s.check("mean_axis", {{"x", x}}, [&] { return mean_axis(x, 3); });
    }
    {
        Tensor x = s.input({a, b});
        s.check("spatial_broadcast", {{"x", x}}, [&] { return spatial_broadcast(x, 3, 4); });
        s.check("transpose", {{"x", x}}, [&] { return transpose(x); });
    }
    {
        Tensor x = s.input({a, b, c}), y = s.input({a, d, c});
        s.check("concat", {{"x", x}, {"y", y}}, [&] { return concat({x, y}, 1); });
    }
    {
        Tensor x = s.input({a, b}), y = s.input({a, b});
        s.check("row_dot", {{"a", x}, {"b", y}}, [&] { return row_dot(x, y); });
    }
    return s.take();
}

GradcheckReport check_model_loss(std::uint64_t seed, std::size_t max_entries_per_input) {
    ModelConfig config;
    Model model(config, seed);
    model.hpgn().extractor().freeze();
    Rng rng(mix_seed({seed, 0x6763ull}));
    std::vector<double> pixels(4 * 3 * 32 * 32);
    for (auto& v : pixels) v = rng.uniform();
    Tensor images = Tensor::from({4, 3, 32, 32}, std::move(pixels), true);
    const std::vector<int> labels{0, 0, 1, 1};
    const std::vector<int> domains{0, 1, 0, 1};
    auto f = [&] {
        ForwardOutput out = model.forward(images);
        LossParts parts;
        parts.cls = cls_loss(out.logits, labels);
        parts.pcl = pcl_total(out.prompts->domain, out.prompts->task, labels, domains).value;
        parts.cci = cci(out.embedding, labels).value;
        return total_loss(parts, {});
    };
    ParamList inputs = model.trainable();
    inputs.push_back({"images", images});
    GradcheckOptions options;
    options.seed = seed;
    options.max_entries_per_input = max_entries_per_input;
    return gradcheck(f, inputs, options);
}

} // namespace hcvp
