#pragma once

// The HyperCast forward pass: shared input embedding, stacked hyper-
// spatiotemporal blocks (HS-GAT then temporal encoder) for each of the four
// (timescale, view) streams, cross-view fusion, cross-timescale fusion and a
// learnable-seed attention decoder.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hypercast/autodiff.hpp"
#include "json.hpp"

namespace hypercast::model {

using ad::Tensor;
using ad::Tape;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class PositionalEncoding { none, sinusoidal };
enum class ViewOrder { dist_demd, demd_dist };  // CVF keeps the last token

struct ModelConfig {
    std::size_t num_stations = 2;
    std::size_t K = 1;
    std::size_t T_r = 14;
    std::size_t T_w = 3;
    std::size_t T_f = 3;
    std::size_t F_raw = 7;
    std::size_t d_h = 64;
    std::size_t L_hstb = 3;
    std::size_t gat_heads = 8;
    std::size_t mhsa_heads = 8;
    std::size_t mhca_heads = 8;
    std::size_t N_dec = 2;
    double dropout = 0.1;
    std::size_t ffn_hidden = 0;  // 0 -> 4 * d_h
    PositionalEncoding positional_encoding = PositionalEncoding::sinusoidal;
    bool normalize_inputs = true;
    ViewOrder view_order = ViewOrder::dist_demd;
    std::uint64_t init_seed = 0;

    std::size_t ffn() const { return ffn_hidden == 0 ? 4 * d_h : ffn_hidden; }
    void validate() const;  // throws ConfigError
};

nlohmann::ordered_json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);  // missing keys keep defaults

// Closed-form learnable scalar count; equals Model::params().total_size().
std::size_t parameter_count(const ModelConfig& c);

// Per-station z-score statistics of the demand channel.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;  // zero spread is stored as 1

    static NormStats identity(std::size_t n);
    static NormStats from_demand(const Eigen::MatrixXd& demand);  // stations x days
};

// One forward batch. Feature tensors are raw (un-normalized) [B, N, T, F].
struct ModelInput {
    std::size_t batch = 0;
    std::vector<double> x_rec;       // B*N*T_r*F
    std::vector<double> x_wek;       // B*N*T_w*F
    Eigen::MatrixXd h_dist;          // N x K, shared by batch and timescales
    std::vector<Eigen::MatrixXd> h_rec_demd;  // B of N x K
    std::vector<Eigen::MatrixXd> h_wek_demd;  // B of N x K
};

struct TraceRecord {
    std::vector<std::string> labels;  // axis names, last two are query, key
    ad::Shape shape;
    std::vector<double> values;
};

// Attention weights by site name, e.g. "gat.0.rec.dist", "tte.2.wek.demd",
// "cvf.rec", "ctf", "dec_self.1", "dec_cross.0".
struct AttentionTrace {
    std::map<std::string, TraceRecord> sites;
    // Per CTF query: L2 norms of the residual (recent) input and of the
    // cross-attention output, [B, N, T_r, 2]. Not an attention matrix.
    std::optional<TraceRecord> ctf_paths;
};

struct ForwardOptions {
    bool training = false;
    std::mt19937_64* rng = nullptr;  // required when training with dropout
    AttentionTrace* trace = nullptr;
};

struct ForwardOutput {
    Tensor normalized;  // [B, N, T_f] in z-score units (identity when not normalizing)
    Tensor prediction;  // [B, N, T_f] in original demand units
};

class Model {
public:
    explicit Model(ModelConfig config, NormStats stats = {});

    const ModelConfig& config() const { return config_; }
    const NormStats& norm() const { return norm_; }
    void set_norm(NormStats stats);
    ad::ParameterSet& params() { return params_; }
    const ad::ParameterSet& params() const { return params_; }

    ForwardOutput forward(Tape& tape, const ModelInput& in, const ForwardOptions& opt = {}) const;

    // ---- sub-blocks, exposed for tests and introspection ----
    struct Ctx {
        Tape& tape;
        const ForwardOptions& opt;
    };
    // Raw features [B,N,T,F] -> normalized constant tensor.
    Tensor input_tensor(Tape& tape, const std::vector<double>& x, std::size_t batch, std::size_t t) const;
    Tensor embed(Ctx c, const Tensor& x) const;
    // h: [B, N, K]
    Tensor hs_gat(Ctx c, const std::string& prefix, const Tensor& z, const Tensor& h,
                  const std::string& site = {}) const;
    // Self-attention encoder layer over axis -2 of [..., T, d].
    Tensor stel(Ctx c, const std::string& prefix, const Tensor& z, std::size_t heads,
                const std::string& site = {}) const;
    Tensor cvf(Ctx c, const std::string& timescale, const Tensor& z_dist, const Tensor& z_demd) const;
    Tensor ctf(Ctx c, const Tensor& z_rec, const Tensor& z_wek) const;
    // Returns normalized predictions [B, N, T_f].
    Tensor decoder(Ctx c, const Tensor& z_ctf) const;

    // Multi-head attention of q_in [..., Tq, d] over kv_in [..., Tk, d].
    Tensor attention(Ctx c, const std::string& prefix, const Tensor& q_in, const Tensor& kv_in, std::size_t heads,
                     const Tensor* mask, const std::string& site, std::vector<std::string> labels) const;

    Tensor incidence_tensor(Tape& tape, const Eigen::MatrixXd& h, std::size_t batch) const;
    Tensor incidence_tensor(Tape& tape, const std::vector<Eigen::MatrixXd>& hs) const;

private:
    void build_params();
    std::vector<double> uniform_init(std::size_t n, std::size_t fan_in);
    void linear_params(const std::string& name, std::size_t in, std::size_t out, bool bias);
    void norm_params(const std::string& name, std::size_t d);
    void attention_params(const std::string& name);
    void stel_params(const std::string& name);

    Tensor linear(Tape& tape, const std::string& name, const Tensor& x, bool bias = true) const;
    Tensor norm(Tape& tape, const std::string& name, const Tensor& x) const;
    Tensor drop(Ctx c, const Tensor& x) const;
    Tensor p(Tape& tape, const std::string& name) const;
    void record(Ctx c, const std::string& site, const Tensor& attn, std::vector<std::string> labels) const;

    ModelConfig config_;
    NormStats norm_;
    mutable ad::ParameterSet params_;  // tapes bind parameters by mutable reference
    std::mt19937_64* init_rng_ = nullptr;  // only set while building parameters
};

// Fixed sinusoidal encodings [T, d].
std::vector<double> sinusoidal_encoding(std::size_t t, std::size_t d);

// Checkpoint = parameter snapshot (<stem>.params) + JSON sidecar (<stem>.json)
// holding the ModelConfig and normalization statistics.
void save_checkpoint(const Model& model, const std::filesystem::path& stem);
Model load_checkpoint(const std::filesystem::path& stem);

}  // namespace hypercast::model
