#include "paqdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace paqdet::model {

Mode mode_from_string(const std::string& s) {
    if (s == "baseline") return Mode::baseline;
    if (s == "paq") return Mode::paq;
    throw std::invalid_argument("unknown mode '" + s + "', expected 'baseline' or 'paq'");
}

std::string to_string(Mode m) { return m == Mode::baseline ? "baseline" : "paq"; }

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1)
            throw std::invalid_argument("config: " + std::string(name) + " must be positive, got " +
                                        std::to_string(v));
    };
    positive(d, "d");
    positive(image_size, "image_size");
    positive(patch, "patch");
    positive(K, "K");
    positive(m, "m");
    positive(L, "L");
    positive(H, "H");
    positive(C, "C");
    positive(ffn_hidden, "ffn_hidden");
    positive(wgen_hidden, "wgen_hidden");
    if (image_size % patch != 0)
        throw std::invalid_argument("config: image_size " + std::to_string(image_size) +
                                    " not divisible by patch " + std::to_string(patch));
    if (d % H != 0)
        throw std::invalid_argument("config: d=" + std::to_string(d) + " not divisible by H=" +
                                    std::to_string(H));
    if (K > tokens())
        throw std::invalid_argument("config: K=" + std::to_string(K) + " exceeds token count M=" +
                                    std::to_string(tokens()));
    if (m >= K)
        throw std::invalid_argument("config: m=" + std::to_string(m) +
                                    " must be smaller than K=" + std::to_string(K));
}

int ParamStore::add(std::string name, ad::Shape shape, std::vector<double> values) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter '" + name + "'");
    if (ad::numel(shape) != values.size())
        throw std::logic_error("parameter '" + name + "' shape/value size mismatch");
    int id = static_cast<int>(params_.size());
    index_[name] = id;
    params_.push_back({std::move(name), std::move(shape), std::move(values)});
    return id;
}

int ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    int i = index_of(name);
    if (i < 0) throw std::invalid_argument("unknown parameter '" + name + "'");
    return params_[i];
}

Param& ParamStore::at(const std::string& name) {
    int i = index_of(name);
    if (i < 0) throw std::invalid_argument("unknown parameter '" + name + "'");
    return params_[i];
}

std::size_t ParamStore::total_scalars() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.values.size();
    return n;
}

const ad::Tensor& Bound::operator()(const std::string& name) const {
    int i = store->index_of(name);
    if (i < 0) throw std::invalid_argument("unknown parameter '" + name + "'");
    return tensors[static_cast<std::size_t>(i)];
}

namespace {

std::vector<double> xavier(Rng& rng, int fan_in, int fan_out) {
    double lim = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> v(static_cast<std::size_t>(fan_in) * fan_out);
    for (auto& x : v) x = rng.uniform(-lim, lim);
    return v;
}

std::vector<double> gaussian(Rng& rng, std::size_t n, double std_dev) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, std_dev);
    return v;
}

}  // namespace

Detector::Detector(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    init_params(seed);
}

// Creation order is the checkpoint layout; shared parameters are drawn
// before the paq-only ones so both modes see identical shared init for a
// given seed.
void Detector::init_params(std::uint64_t seed) {
    Rng rng(seed);
    const int d = cfg_.d, C = cfg_.C, M = cfg_.tokens();
    const int pdim = 3 * cfg_.patch * cfg_.patch;

    auto linear = [&](const std::string& name, int in, int out) {
        params_.add(name + ".w", {in, out}, xavier(rng, in, out));
        params_.add(name + ".b", {out}, std::vector<double>(out, 0.0));
    };
    auto attention = [&](const std::string& prefix) {
        linear(prefix + ".q", d, d);
        linear(prefix + ".k", d, d);
        linear(prefix + ".v", d, d);
        linear(prefix + ".o", d, d);
    };
    auto ffn = [&](const std::string& prefix, int hidden) {
        linear(prefix + ".1", d, hidden);
        linear(prefix + ".2", hidden, d);
    };

    linear("enc.patch", pdim, d);
    params_.add("enc.pos", {M, d}, gaussian(rng, static_cast<std::size_t>(M) * d, 0.02));
    attention("enc.attn");
    ffn("enc.ffn", cfg_.ffn_hidden);
    linear("enc.score", d, C);

    for (int l = 0; l < cfg_.L; ++l) {
        std::string base = "dec." + std::to_string(l);
        attention(base + ".self");
        attention(base + ".cross");
        ffn(base + ".ffn", cfg_.ffn_hidden);
    }

    linear("head.cls", d, C);
    // focal prior: start every class at probability 1/100
    std::fill(params_.at("head.cls.b").values.begin(), params_.at("head.cls.b").values.end(),
              -std::log(99.0));
    linear("head.box1", d, d);
    params_.add("head.box2.w", {d, 4}, std::vector<double>(static_cast<std::size_t>(d) * 4, 0.0));
    params_.add("head.box2.b", {4}, std::vector<double>(4, 0.0));

    linear("posq.1", 4, d);
    linear("posq.2", d, d);

    if (cfg_.mode == Mode::paq) {
        params_.add("paq.patterns", {cfg_.m, d},
                    gaussian(rng, static_cast<std::size_t>(cfg_.m) * d, 0.02));
        linear("paq.wgen.1", d, cfg_.wgen_hidden);
        linear("paq.wgen.2", cfg_.wgen_hidden, cfg_.m);
    }
}

Bound Detector::bind(ad::Graph* g) const {
    Bound b;
    b.store = &params_;
    b.tensors.reserve(params_.size());
    for (int i = 0; i < params_.size(); ++i) {
        const Param& p = params_.at(i);
        b.tensors.push_back(g ? g->leaf(p.shape, p.values) : ad::make_constant(p.shape, p.values));
    }
    return b;
}

namespace {

ad::Tensor linear_fw(const ad::Tensor& x, const Bound& p, const std::string& name) {
    return ad::add(ad::matmul(x, p(name + ".w")), p(name + ".b"));
}

ad::Tensor mlp2_fw(const ad::Tensor& x, const Bound& p, const std::string& n1,
                   const std::string& n2) {
    return linear_fw(ad::relu(linear_fw(x, p, n1)), p, n2);
}

ad::Tensor mha(const ad::Tensor& q_in, const ad::Tensor& k_in, const ad::Tensor& v_in,
               const Bound& p, const std::string& prefix, int heads) {
    ad::Tensor q = linear_fw(q_in, p, prefix + ".q");
    ad::Tensor k = linear_fw(k_in, p, prefix + ".k");
    ad::Tensor v = linear_fw(v_in, p, prefix + ".v");
    const int d = q.cols();
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    ad::Tensor heads_out;
    for (int h = 0; h < heads; ++h) {
        ad::Tensor qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
        ad::Tensor kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
        ad::Tensor vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
        ad::Tensor att = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
        ad::Tensor oh = ad::matmul(att, vh);
        heads_out = h == 0 ? oh : ad::concat(heads_out, oh, 1);
    }
    return linear_fw(heads_out, p, prefix + ".o");
}

}  // namespace

EncoderOutput Detector::encode(const Image& img, const Bound& p) const {
    const int S = cfg_.image_size, ps = cfg_.patch;
    if (img.size != S)
        throw std::invalid_argument("encode: image side " + std::to_string(img.size) +
                                    " does not match config image_size " + std::to_string(S));
    if (img.data.size() != static_cast<std::size_t>(3) * S * S)
        throw std::invalid_argument("encode: image buffer size mismatch");

    const int grid = S / ps;
    const int M = grid * grid;
    const int pdim = 3 * ps * ps;

    std::vector<double> patches(static_cast<std::size_t>(M) * pdim);
    for (int ty = 0; ty < grid; ++ty) {
        for (int tx = 0; tx < grid; ++tx) {
            double* row = &patches[(static_cast<std::size_t>(ty) * grid + tx) * pdim];
            int k = 0;
            for (int c = 0; c < 3; ++c)
                for (int py = 0; py < ps; ++py)
                    for (int px = 0; px < ps; ++px)
                        row[k++] = img.at(c, ty * ps + py, tx * ps + px);
        }
    }

    ad::Tensor x = linear_fw(ad::make_constant({M, pdim}, std::move(patches)), p, "enc.patch");
    x = ad::add(x, p("enc.pos"));
    x = ad::layer_norm_rows(ad::add(x, mha(x, x, x, p, "enc.attn", cfg_.H)));
    x = ad::layer_norm_rows(ad::add(x, mlp2_fw(x, p, "enc.ffn.1", "enc.ffn.2")));

    EncoderOutput enc;
    enc.tokens = x;
    enc.token_scores = linear_fw(x, p, "enc.score");

    std::vector<double> anchors(static_cast<std::size_t>(M) * 4);
    for (int ty = 0; ty < grid; ++ty) {
        for (int tx = 0; tx < grid; ++tx) {
            double* a = &anchors[(static_cast<std::size_t>(ty) * grid + tx) * 4];
            a[0] = (tx + 0.5) * ps / S;
            a[1] = (ty + 0.5) * ps / S;
            a[2] = 0.2;
            a[3] = 0.2;
        }
    }
    enc.token_anchors = ad::make_constant({M, 4}, std::move(anchors));
    return enc;
}

QuerySet Detector::select_topk(const EncoderOutput& enc, const Bound&) const {
    const int M = enc.tokens.rows();
    const int K = cfg_.K;
    if (K > M)
        throw std::invalid_argument("select_topk: K=" + std::to_string(K) + " exceeds M=" +
                                    std::to_string(M));

    std::vector<double> best = ad::rowwise_max_values(enc.token_scores);
    std::vector<int> order(M);
    std::iota(order.begin(), order.end(), 0);
    // descending score; stable keeps the lower index first on ties
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return best[a] > best[b]; });
    order.resize(K);

    QuerySet q;
    q.selected_indices = order;
    q.content = ad::gather_rows(enc.tokens, order);
    q.references = ad::gather_rows(enc.token_anchors, order);
    return q;
}

ad::Tensor Detector::generate_weights(const ad::Tensor& z_i, const Bound& p) const {
    if (z_i.cols() != cfg_.d)
        throw std::invalid_argument("generate_weights: input width " + std::to_string(z_i.cols()) +
                                    " does not match d=" + std::to_string(cfg_.d));
    return ad::softmax_rows(mlp2_fw(z_i, p, "paq.wgen.1", "paq.wgen.2"));
}

ad::Tensor Detector::compose_queries(const ad::Tensor& weights, const ad::Tensor& patterns) const {
    if (weights.cols() != patterns.rows())
        throw std::invalid_argument("compose_queries: weights have " +
                                    std::to_string(weights.cols()) + " columns but the bank holds " +
                                    std::to_string(patterns.rows()) + " patterns");
    return ad::matmul(weights, patterns);
}

ModelOutput Detector::decode(const QuerySet& q, const EncoderOutput& enc, const Bound& p) const {
    ad::Tensor x = q.content;
    ad::Tensor refs = q.references;
    ad::Tensor pos;
    ModelOutput out;
    for (int l = 0; l < cfg_.L; ++l) {
        if (l == 0 || cfg_.reposition_each_layer)
            pos = mlp2_fw(refs, p, "posq.1", "posq.2");
        const std::string base = "dec." + std::to_string(l);

        ad::Tensor qk = ad::add(x, pos);
        x = ad::layer_norm_rows(ad::add(x, mha(qk, qk, x, p, base + ".self", cfg_.H)));
        ad::Tensor qc = ad::add(x, pos);
        x = ad::layer_norm_rows(ad::add(x, mha(qc, enc.tokens, enc.tokens, p, base + ".cross", cfg_.H)));
        x = ad::layer_norm_rows(ad::add(x, mlp2_fw(x, p, base + ".ffn.1", base + ".ffn.2")));

        ad::Tensor delta = linear_fw(ad::relu(linear_fw(x, p, "head.box1")), p, "head.box2");
        refs = ad::sigmoid(ad::add(ad::inverse_sigmoid(refs), delta));
        out.per_layer_logits.push_back(linear_fw(x, p, "head.cls"));
        out.per_layer_boxes.push_back(refs);
    }
    return out;
}

ForwardResult Detector::forward(const Image& img, const Bound& p) const {
    ForwardResult r;
    r.enc = encode(img, p);
    r.queries = select_topk(r.enc, p);
    if (cfg_.mode == Mode::paq) {
        r.queries.weights = generate_weights(r.queries.content, p);
        r.queries.content = compose_queries(r.queries.weights, p("paq.patterns"));
    }
    r.out = decode(r.queries, r.enc, p);
    return r;
}

ForwardResult Detector::forward(const Image& img, ad::Graph* g) const {
    Bound b = bind(g);
    return forward(img, b);
}

}  // namespace paqdet::model
