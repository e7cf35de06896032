#include "hypercast/model.hpp"

#include <cmath>
#include <fstream>

#include "hypercast/param_io.hpp"

namespace hypercast::model {

using ad::Shape;

namespace {

Shape leading(const Shape& s, std::size_t drop) { return Shape(s.begin(), s.end() - static_cast<long>(drop)); }

std::size_t product(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

const char* pe_name(PositionalEncoding p) { return p == PositionalEncoding::none ? "none" : "sinusoidal"; }
const char* order_name(ViewOrder v) { return v == ViewOrder::dist_demd ? "dist_demd" : "demd_dist"; }

const char* const kStreams[2] = {"rec", "wek"};
const char* const kViews[2] = {"dist", "demd"};

}  // namespace

// ---- config -----------------------------------------------------------------

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (num_stations < 2) fail("num_stations must be at least 2");
    if (K < 1 || K + 1 > num_stations) fail("K must lie in [1, num_stations-1]");
    if (T_r < 1 || T_w < 1 || T_f < 1) fail("T_r, T_w and T_f must be positive");
    if (F_raw < 1) fail("F_raw must be positive");
    if (d_h < 1) fail("d_h must be positive");
    for (auto [name, h] : {std::pair{"gat_heads", gat_heads}, {"mhsa_heads", mhsa_heads}, {"mhca_heads", mhca_heads}}) {
        if (h < 1) fail(std::string(name) + " must be positive");
        if (d_h % h != 0) fail("d_h=" + std::to_string(d_h) + " is not divisible by " + name + "=" + std::to_string(h));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
    return {{"num_stations", c.num_stations},
            {"K", c.K},
            {"T_r", c.T_r},
            {"T_w", c.T_w},
            {"T_f", c.T_f},
            {"F_raw", c.F_raw},
            {"d_h", c.d_h},
            {"L_hstb", c.L_hstb},
            {"gat_heads", c.gat_heads},
            {"mhsa_heads", c.mhsa_heads},
            {"mhca_heads", c.mhca_heads},
            {"N_dec", c.N_dec},
            {"dropout", c.dropout},
            {"ffn_hidden", c.ffn()},
            {"positional_encoding", pe_name(c.positional_encoding)},
            {"normalize_inputs", c.normalize_inputs},
            {"view_order", order_name(c.view_order)},
            {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "num_stations") c.num_stations = v.get<std::size_t>();
            else if (k == "K") c.K = v.get<std::size_t>();
            else if (k == "T_r") c.T_r = v.get<std::size_t>();
            else if (k == "T_w") c.T_w = v.get<std::size_t>();
            else if (k == "T_f") c.T_f = v.get<std::size_t>();
            else if (k == "F_raw") c.F_raw = v.get<std::size_t>();
            else if (k == "d_h") c.d_h = v.get<std::size_t>();
            else if (k == "L_hstb") c.L_hstb = v.get<std::size_t>();
            else if (k == "gat_heads") c.gat_heads = v.get<std::size_t>();
            else if (k == "mhsa_heads") c.mhsa_heads = v.get<std::size_t>();
            else if (k == "mhca_heads") c.mhca_heads = v.get<std::size_t>();
            else if (k == "N_dec") c.N_dec = v.get<std::size_t>();
            else if (k == "dropout") c.dropout = v.get<double>();
            else if (k == "ffn_hidden") c.ffn_hidden = v.get<std::size_t>();
            else if (k == "normalize_inputs") c.normalize_inputs = v.get<bool>();
            else if (k == "init_seed") c.init_seed = v.get<std::uint64_t>();
            else if (k == "positional_encoding") {
                const auto s = v.get<std::string>();
                if (s == "none") c.positional_encoding = PositionalEncoding::none;
                else if (s == "sinusoidal") c.positional_encoding = PositionalEncoding::sinusoidal;
                else throw ConfigError("positional_encoding must be 'none' or 'sinusoidal'");
            } else if (k == "view_order") {
                const auto s = v.get<std::string>();
                if (s == "dist_demd") c.view_order = ViewOrder::dist_demd;
                else if (s == "demd_dist") c.view_order = ViewOrder::demd_dist;
                else throw ConfigError("view_order must be 'dist_demd' or 'demd_dist'");
            } else {
                throw ConfigError("unknown model config key '" + k + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t d = c.d_h, f = c.ffn();
    const std::size_t attn = 4 * d * d + d;
    const std::size_t ln = 2 * d;
    const std::size_t ffn = 2 * d * f + f + d;
    const std::size_t stel = attn + ln + ffn + ln;
    const std::size_t gat = d * d + 2 * d + ln;  // heads * (d*dh + 2*dh) with heads*dh = d
    const std::size_t embed = c.F_raw * d + d;
    const std::size_t hstb = 4 * c.L_hstb * (gat + stel);
    const std::size_t cvf = 2 * (2 * (d * d + d) + stel);
    const std::size_t ctf = attn + ln;
    const std::size_t dec = c.T_f * d + c.N_dec * (2 * attn + 3 * ln + ffn) + d + 1;
    return embed + hstb + cvf + ctf + dec;
}

// ---- normalization ------------------------------------------------------------

NormStats NormStats::identity(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }

NormStats NormStats::from_demand(const Eigen::MatrixXd& demand) {
    NormStats s;
    for (Eigen::Index p = 0; p < demand.rows(); ++p) {
        const double m = demand.row(p).mean();
        const double var = (demand.row(p).array() - m).square().mean();
        const double sd = std::sqrt(var);
        s.mean.push_back(m);
        s.std.push_back(sd > 1e-12 ? sd : 1.0);
    }
    return s;
}

std::vector<double> sinusoidal_encoding(std::size_t t, std::size_t d) {
    std::vector<double> pe(t * d);
    for (std::size_t pos = 0; pos < t; ++pos)
        for (std::size_t i = 0; i < d; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            const double a = static_cast<double>(pos) * rate;
            pe[pos * d + i] = i % 2 == 0 ? std::sin(a) : std::cos(a);
        }
    return pe;
}

// ---- parameters -----------------------------------------------------------------

Model::Model(ModelConfig config, NormStats stats) : config_(std::move(config)) {
    config_.validate();
    set_norm(std::move(stats));
    build_params();
}

void Model::set_norm(NormStats stats) {
    if (stats.mean.empty() && stats.std.empty()) stats = NormStats::identity(config_.num_stations);
    if (stats.mean.size() != config_.num_stations || stats.std.size() != config_.num_stations)
        throw ConfigError("normalization statistics do not match num_stations");
    for (double s : stats.std)
        if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("normalization std must be positive and finite");
    norm_ = std::move(stats);
}

std::vector<double> Model::uniform_init(std::size_t n, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(n);
    for (double& x : v) x = u(*init_rng_);
    return v;
}

void Model::linear_params(const std::string& name, std::size_t in, std::size_t out, bool bias) {
    params_.add(name + ".W", {in, out}, uniform_init(in * out, in));
    if (bias) params_.add(name + ".b", {out}, uniform_init(out, in));
}

void Model::norm_params(const std::string& name, std::size_t d) {
    params_.add(name + ".g", {d}, std::vector<double>(d, 1.0));
    params_.add(name + ".b", {d}, std::vector<double>(d, 0.0));
}

void Model::attention_params(const std::string& name) {
    const std::size_t d = config_.d_h;
    params_.add(name + ".Wq", {d, d}, uniform_init(d * d, d));
    params_.add(name + ".Wk", {d, d}, uniform_init(d * d, d));
    params_.add(name + ".Wv", {d, d}, uniform_init(d * d, d));
    params_.add(name + ".Wo", {d, d}, uniform_init(d * d, d));
    params_.add(name + ".bo", {d}, uniform_init(d, d));
}

void Model::stel_params(const std::string& name) {
    attention_params(name + ".attn");
    norm_params(name + ".ln1", config_.d_h);
    linear_params(name + ".ffn1", config_.d_h, config_.ffn(), true);
    linear_params(name + ".ffn2", config_.ffn(), config_.d_h, true);
    norm_params(name + ".ln2", config_.d_h);
}

void Model::build_params() {
    std::mt19937_64 rng(config_.init_seed);
    init_rng_ = &rng;
    const std::size_t d = config_.d_h;
    linear_params("embed", config_.F_raw, d, true);
    for (std::size_t l = 0; l < config_.L_hstb; ++l)
        for (const char* u : kStreams)
            for (const char* v : kViews) {
                const std::string pre = "hstb." + std::to_string(l) + "." + u + "." + v;
                const std::size_t dh = d / config_.gat_heads;
                for (std::size_t h = 0; h < config_.gat_heads; ++h) {
                    const std::string head = pre + ".gat.head" + std::to_string(h);
                    params_.add(head + ".W", {d, dh}, uniform_init(d * dh, d));
                    params_.add(head + ".a", {2 * dh}, uniform_init(2 * dh, 2 * dh));
                }
                norm_params(pre + ".gat.ln", d);
                stel_params(pre + ".tte");
            }
    for (const char* u : kStreams) {
        const std::string pre = std::string("cvf.") + u;
        linear_params(pre + ".in", d, d, true);
        stel_params(pre + ".stel");
        linear_params(pre + ".out", d, d, true);
    }
    attention_params("ctf.attn");
    norm_params("ctf.ln", d);

    std::normal_distribution<double> seed_init(0.0, 0.02);
    std::vector<double> seed(config_.T_f * d);
    for (double& x : seed) x = seed_init(rng);
    params_.add("dec.seed", {config_.T_f, d}, std::move(seed));
    for (std::size_t l = 0; l < config_.N_dec; ++l) {
        const std::string pre = "dec." + std::to_string(l);
        attention_params(pre + ".self");
        norm_params(pre + ".ln1", d);
        attention_params(pre + ".cross");
        norm_params(pre + ".ln2", d);
        linear_params(pre + ".ffn1", d, config_.ffn(), true);
        linear_params(pre + ".ffn2", config_.ffn(), d, true);
        norm_params(pre + ".ln3", d);
    }
    linear_params("head", d, 1, true);
    init_rng_ = nullptr;
}

// ---- building blocks ------------------------------------------------------------

Tensor Model::p(Tape& tape, const std::string& name) const { return tape.parameter(params_.at(name)); }

Tensor Model::linear(Tape& tape, const std::string& name, const Tensor& x, bool bias) const {
    Tensor y = ad::matmul(x, p(tape, name + ".W"));
    return bias ? ad::add(y, p(tape, name + ".b")) : y;
}

Tensor Model::norm(Tape& tape, const std::string& name, const Tensor& x) const {
    return ad::layer_norm(x, p(tape, name + ".g"), p(tape, name + ".b"));
}

Tensor Model::drop(Ctx c, const Tensor& x) const {
    if (!c.opt.training || config_.dropout == 0.0) return x;
    if (c.opt.rng == nullptr) throw std::invalid_argument("training forward with dropout needs an rng");
    return ad::dropout(x, config_.dropout, *c.opt.rng, true);
}

void Model::record(Ctx c, const std::string& site, const Tensor& attn, std::vector<std::string> labels) const {
    if (c.opt.trace == nullptr || site.empty()) return;
    auto v = attn.value();
    c.opt.trace->sites[site] = TraceRecord{std::move(labels), attn.shape(), std::vector<double>(v.begin(), v.end())};
}

Tensor Model::input_tensor(Tape& tape, const std::vector<double>& x, std::size_t batch, std::size_t t) const {
    const std::size_t n = config_.num_stations, f = config_.F_raw;
    if (x.size() != batch * n * t * f)
        throw ad::ShapeError("input: expected " + std::to_string(batch * n * t * f) + " values for [" +
                             std::to_string(batch) + "," + std::to_string(n) + "," + std::to_string(t) + "," +
                             std::to_string(f) + "], got " + std::to_string(x.size()));
    std::vector<double> v = x;
    if (config_.normalize_inputs)
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < t; ++i) {
                    double& d = v[((b * n + s) * t + i) * f];
                    d = (d - norm_.mean[s]) / norm_.std[s];
                }
    return tape.constant({batch, n, t, f}, std::move(v));
}

Tensor Model::embed(Ctx c, const Tensor& x) const {
    Tensor z = linear(c.tape, "embed", x);
    if (config_.positional_encoding == PositionalEncoding::sinusoidal) {
        const std::size_t t = x.dim(-2);
        z = ad::add(z, c.tape.constant({t, config_.d_h}, sinusoidal_encoding(t, config_.d_h)));
    }
    return z;
}

Tensor Model::incidence_tensor(Tape& tape, const Eigen::MatrixXd& h, std::size_t batch) const {
    const auto n = static_cast<std::size_t>(h.rows()), k = static_cast<std::size_t>(h.cols());
    std::vector<double> v(batch * n * k);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j)
                v[(b * n + i) * k + j] = h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return tape.constant({batch, n, k}, std::move(v));
}

Tensor Model::incidence_tensor(Tape& tape, const std::vector<Eigen::MatrixXd>& hs) const {
    if (hs.empty()) throw ad::ShapeError("incidence: empty batch");
    const auto n = static_cast<std::size_t>(hs[0].rows()), k = static_cast<std::size_t>(hs[0].cols());
    std::vector<double> v;
    v.reserve(hs.size() * n * k);
    for (const auto& h : hs) {
        if (static_cast<std::size_t>(h.rows()) != n || static_cast<std::size_t>(h.cols()) != k)
            throw ad::ShapeError("incidence: inconsistent shapes within batch");
        for (Eigen::Index i = 0; i < h.rows(); ++i)
            for (Eigen::Index j = 0; j < h.cols(); ++j) v.push_back(h(i, j));
    }
    return tape.constant({hs.size(), n, k}, std::move(v));
}

Tensor Model::attention(Ctx c, const std::string& prefix, const Tensor& q_in, const Tensor& kv_in,
                        std::size_t heads, const Tensor* mask, const std::string& site,
                        std::vector<std::string> labels) const {
    Tape& tape = c.tape;
    const std::size_t d = config_.d_h, dh = d / heads;
    const Shape lead = leading(q_in.shape(), 2);
    if (leading(kv_in.shape(), 2) != lead) throw ad::ShapeError("attention: query/key leading dims differ");
    const std::size_t l = product(lead), tq = q_in.dim(-2), tk = kv_in.dim(-2);

    auto split = [&](const Tensor& x, std::size_t t) {
        return ad::transpose(ad::reshape(x, {l, t, heads, dh}), {0, 2, 1, 3});  // [L, H, T, dh]
    };
    Tensor q = split(ad::matmul(q_in, p(tape, prefix + ".Wq")), tq);
    Tensor k = split(ad::matmul(kv_in, p(tape, prefix + ".Wk")), tk);
    Tensor v = split(ad::matmul(kv_in, p(tape, prefix + ".Wv")), tk);
    Tensor scores = ad::scale(ad::matmul(q, ad::transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor a = mask ? ad::masked_softmax(scores, *mask) : ad::softmax(scores);
    if (c.opt.trace && !site.empty()) {
        Shape s = lead;
        s.insert(s.end(), {heads, tq, tk});
        record(c, site, ad::reshape(a, s), std::move(labels));
    }
    Tensor o = ad::transpose(ad::matmul(a, v), {0, 2, 1, 3});  // [L, Tq, H, dh]
    Shape out_shape = lead;
    out_shape.insert(out_shape.end(), {tq, d});
    o = ad::reshape(o, out_shape);
    return ad::add(ad::matmul(o, p(tape, prefix + ".Wo")), p(tape, prefix + ".bo"));
}

Tensor Model::stel(Ctx c, const std::string& prefix, const Tensor& z, std::size_t heads,
                   const std::string& site) const {
    std::vector<std::string> labels;
    const std::size_t lead = z.rank() - 2;
    static const char* const names3[] = {"batch", "station", "time"};
    for (std::size_t i = 0; i < lead; ++i) labels.push_back(i < 3 ? names3[i] : "axis" + std::to_string(i));
    labels.insert(labels.end(), {"head", "query", "key"});

    Tensor a = attention(c, prefix + ".attn", z, z, heads, nullptr, site, std::move(labels));
    Tensor z1 = norm(c.tape, prefix + ".ln1", ad::add(z, drop(c, a)));
    Tensor f = linear(c.tape, prefix + ".ffn2", ad::relu(linear(c.tape, prefix + ".ffn1", z1)));
    return norm(c.tape, prefix + ".ln2", ad::add(z1, drop(c, f)));
}

Tensor Model::hs_gat(Ctx c, const std::string& prefix, const Tensor& z, const Tensor& h,
                     const std::string& site) const {
    Tape& tape = c.tape;
    const std::size_t b = z.dim(0), n = z.dim(1), t = z.dim(2), d = z.dim(3);
    const std::size_t heads = config_.gat_heads, dh = d / heads;
    if (h.rank() != 3 || h.dim(0) != b || h.dim(1) != n)
        throw ad::ShapeError("hs_gat: incidence " + ad::shape_str(h.shape()) + " does not match features " +
                             ad::shape_str(z.shape()));
    const std::size_t k = h.dim(2);
    if (k != config_.K)
        throw ad::ShapeError("hs_gat: incidence has K=" + std::to_string(k) + " but the model expects K=" +
                             std::to_string(config_.K));

    // Node -> hyperedge: F = H^T Z per batch item, all time steps at once.
    Tensor f = ad::matmul(ad::transpose_last2(h), ad::reshape(z, {b, n, t * d}));  // [B, K, T*d]
    f = ad::transpose(ad::reshape(f, {b, k, t, d}), {0, 2, 1, 3});                  // [B, T, K, d]

    std::vector<Tensor> ws, as;
    for (std::size_t i = 0; i < heads; ++i) {
        const std::string head = prefix + ".gat.head" + std::to_string(i);
        ws.push_back(p(tape, head + ".W"));
        as.push_back(ad::reshape(p(tape, head + ".a"), {1, 2 * dh}));
    }
    Tensor w = ad::concat(ws, -1);  // [d, heads*dh]
    Tensor a = ad::concat(as, 0);   // [heads, 2*dh]
    Tensor fw = ad::reshape(ad::matmul(f, w), {b, t, k, heads, dh});

    // e[k,k'] = LeakyReLU(a_1 . f_k + a_2 . f_k')
    auto project = [&](std::size_t half) {
        Tensor s = ad::mul(fw, ad::slice(a, 1, half * dh, (half + 1) * dh));  // [B,T,K,H,dh]
        s = ad::scale(ad::mean(s, -1), static_cast<double>(dh));             // [B,T,K,H]
        return ad::transpose(s, {0, 1, 3, 2});                                // [B,T,H,K]
    };
    Tensor s1 = ad::reshape(project(0), {b, t, heads, k, 1});
    Tensor s2 = ad::reshape(project(1), {b, t, heads, 1, k});
    Tensor alpha = ad::softmax(ad::leaky_relu(ad::add(s1, s2), 0.01));  // [B,T,H,K,K]
    record(c, site, alpha, {"batch", "time", "head", "query", "key"});

    Tensor fh = ad::transpose(fw, {0, 1, 3, 2, 4});                    // [B,T,H,K,dh]
    Tensor agg = ad::transpose(ad::matmul(alpha, fh), {0, 3, 1, 2, 4});  // [B,K,T,H,dh]
    agg = ad::reshape(agg, {b, k, t * d});

    // Hyperedge -> node and residual.
    Tensor back = ad::reshape(ad::matmul(h, agg), {b, n, t, d});
    return norm(tape, prefix + ".gat.ln", ad::add(z, drop(c, back)));
}

Tensor Model::cvf(Ctx c, const std::string& timescale, const Tensor& z_dist, const Tensor& z_demd) const {
    if (z_dist.shape() != z_demd.shape()) throw ad::ShapeError("cvf: view shapes differ");
    const std::string pre = "cvf." + timescale;
    const Shape s = z_dist.shape();
    const bool dist_first = config_.view_order == ViewOrder::dist_demd;
    const Tensor parts[2] = {dist_first ? z_dist : z_demd, dist_first ? z_demd : z_dist};
    Shape tokens = s;
    tokens.back() = 2;
    tokens.push_back(config_.d_h);
    Tensor x = ad::reshape(ad::concat(parts, -1), tokens);  // [..., 2, d]
    x = linear(c.tape, pre + ".in", x);
    x = stel(c, pre + ".stel", x, config_.mhsa_heads, pre);
    x = ad::reshape(ad::slice(x, -2, 1, 2), s);  // the last view's token
    return linear(c.tape, pre + ".out", x);
}

Tensor Model::ctf(Ctx c, const Tensor& z_rec, const Tensor& z_wek) const {
    Tensor a = attention(c, "ctf.attn", z_rec, z_wek, config_.mhca_heads, nullptr, "ctf",
                         {"batch", "station", "head", "query", "key"});
    if (c.opt.trace != nullptr) {
        const std::size_t d = config_.d_h, rows = z_rec.size() / d;
        auto rv = z_rec.value();
        auto av = a.value();
        TraceRecord r{{"batch", "station", "query", "path"}, leading(z_rec.shape(), 1), {}};
        r.shape.push_back(2);
        r.values.resize(rows * 2);
        for (std::size_t i = 0; i < rows; ++i) {
            double nr = 0.0, na = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                nr += rv[i * d + j] * rv[i * d + j];
                na += av[i * d + j] * av[i * d + j];
            }
            r.values[2 * i] = std::sqrt(nr);
            r.values[2 * i + 1] = std::sqrt(na);
        }
        c.opt.trace->ctf_paths = std::move(r);
    }
    return norm(c.tape, "ctf.ln", ad::add(z_rec, drop(c, a)));
}

Tensor Model::decoder(Ctx c, const Tensor& z_ctf) const {
    Tape& tape = c.tape;
    const std::size_t b = z_ctf.dim(0), n = z_ctf.dim(1), tf = config_.T_f, d = config_.d_h;
    Tensor tgt = ad::add(tape.constant_fill({b, n, tf, d}, 0.0), p(tape, "dec.seed"));
    Tensor mask = ad::causal_mask(tape, tf);
    for (std::size_t l = 0; l < config_.N_dec; ++l) {
        const std::string pre = "dec." + std::to_string(l);
        const std::string ls = std::to_string(l);
        Tensor s = attention(c, pre + ".self", tgt, tgt, config_.mhsa_heads, &mask, "dec_self." + ls,
                             {"batch", "station", "head", "query", "key"});
        tgt = norm(tape, pre + ".ln1", ad::add(tgt, drop(c, s)));
        Tensor x = attention(c, pre + ".cross", tgt, z_ctf, config_.mhca_heads, nullptr, "dec_cross." + ls,
                             {"batch", "station", "head", "query", "key"});
        tgt = norm(tape, pre + ".ln2", ad::add(tgt, drop(c, x)));
        Tensor f = linear(tape, pre + ".ffn2", ad::relu(linear(tape, pre + ".ffn1", tgt)));
        tgt = norm(tape, pre + ".ln3", ad::add(tgt, drop(c, f)));
    }
    return ad::reshape(linear(tape, "head", tgt), {b, n, tf});
}

ForwardOutput Model::forward(Tape& tape, const ModelInput& in, const ForwardOptions& opt) const {
    const Ctx c{tape, opt};
    const std::size_t b = in.batch;
    if (b == 0) throw ad::ShapeError("forward: empty batch");
    if (in.h_rec_demd.size() != b || in.h_wek_demd.size() != b)
        throw ad::ShapeError("forward: need one demand incidence per batch item and timescale");
    if (static_cast<std::size_t>(in.h_dist.rows()) != config_.num_stations)
        throw ad::ShapeError("forward: distance incidence has the wrong station count");

    const Tensor emb[2] = {embed(c, input_tensor(tape, in.x_rec, b, config_.T_r)),
                           embed(c, input_tensor(tape, in.x_wek, b, config_.T_w))};
    const Tensor h_dist = incidence_tensor(tape, in.h_dist, b);
    const Tensor h[2][2] = {{h_dist, incidence_tensor(tape, in.h_rec_demd)},
                            {h_dist, incidence_tensor(tape, in.h_wek_demd)}};

    Tensor z[2][2];
    for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v) {
            z[u][v] = emb[u];  // both views start from the same embedding
            for (std::size_t l = 0; l < config_.L_hstb; ++l) {
                const std::string tag = std::to_string(l) + "." + kStreams[u] + "." + kViews[v];
                z[u][v] = hs_gat(c, "hstb." + tag, z[u][v], h[u][v], "gat." + tag);
                z[u][v] = stel(c, "hstb." + tag + ".tte", z[u][v], config_.mhsa_heads, "tte." + tag);
            }
        }
    const Tensor fused_rec = cvf(c, "rec", z[0][0], z[0][1]);
    const Tensor fused_wek = cvf(c, "wek", z[1][0], z[1][1]);
    const Tensor y = decoder(c, ctf(c, fused_rec, fused_wek));

    ForwardOutput out{y, y};
    if (config_.normalize_inputs) {
        const std::size_t n = config_.num_stations;
        out.prediction = ad::add(ad::mul(y, tape.constant({n, 1}, norm_.std)), tape.constant({n, 1}, norm_.mean));
    }
    return out;
}

// ---- checkpoints ----------------------------------------------------------------

void save_checkpoint(const Model& model, const std::filesystem::path& stem) {
    ad::save_snapshot(model.params(), std::filesystem::path(stem.string() + ".params"));
    nlohmann::ordered_json j;
    j["format"] = "hypercast-checkpoint";
    j["version"] = 1;
    j["config"] = to_json(model.config());
    j["norm"] = {{"mean", model.norm().mean}, {"std", model.norm().std}};
    j["parameter_count"] = model.params().total_size();
    const auto path = std::filesystem::path(stem.string() + ".json");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ad::SnapshotError("cannot open " + path.string() + " for writing");
    f << j.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path& stem) {
    const auto path = std::filesystem::path(stem.string() + ".json");
    std::ifstream f(path);
    if (!f) throw ad::SnapshotError("cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ad::SnapshotError(path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "hypercast-checkpoint") throw ad::SnapshotError(path.string() + ": not a checkpoint");
    NormStats stats;
    try {
        stats.mean = j.at("norm").at("mean").get<std::vector<double>>();
        stats.std = j.at("norm").at("std").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ad::SnapshotError(path.string() + ": bad normalization block: " + e.what());
    }
    Model m(model_config_from_json(j.at("config")), std::move(stats));
    ad::load_snapshot(m.params(), ad::read_snapshot(std::filesystem::path(stem.string() + ".params")));
    return m;
}

}  // namespace hypercast::model
