#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace openparts {

constexpr const char* kToolVersion = "0.1.0";

// Every knob the engine reads, with its stock default. JSON config files
// override a subset; unknown keys are rejected rather than ignored.
struct RunConfig {
    // routing
    double rho = 0.30;
    int parts = 16;
    double gumbel_tau = 0.5;
    bool tau_anneal = false;         // linear 1.0 -> 0.1 over training when set
    int attn_heads = 4;
    int fusion_hidden = 256;
    int embed_dim = 128;

    // outlier synthesis and calibration
    double margin = 5.0;
    int n_ood = 64;
    std::vector<double> ood_split = {1.0, 1.0, 1.0};  // tail, mix, sphere weights
    double beta_tail = 2.0;
    int mix_k = 2;
    double mix_sigma = 0.1;
    double alpha_mean = 0.9;
    double alpha_cov = 0.9;
    bool cov_diagonal = false;
    double tau_temp = 1.0;
    double gamma_init = 10.0;

    // objective weights
    double lambda_nce = 0.65;
    double lambda_scon = 0.35;
    double lambda_ce = 1.0;
    double lambda_oe = 0.5;
    double lambda_ent = 0.5;
    double tau_c = 0.1;

    // optimizer
    double lr = 0.3;
    double momentum = 0.9;
    double weight_decay = 5e-5;
    int epochs = 101;
    int batch_size = 128;
    uint64_t seed = 0;

    // feature-space views
    double view_jitter = 0.05;
    double view_dropout = 0.10;

    // evaluation
    int kmeans_restarts = 10;
    int kmeans_max_iter = 300;
    int eval_kmin = 2;
    int eval_kmax = 40;
    std::string eval_k_mode = "known";  // "known" or "estimate"
    bool eval_k_labeled = false;        // estimate K against a held-out labeled split
    int eval_k_subsample = 600;         // rows fed to the K scan (0 = all)
    int eval_k_restarts = 3;            // restarts per scanned K

    // synthetic benchmark
    int synth_dim = 32;
    int synth_classes = 20;
    int synth_known = 10;
    int synth_per_class = 100;
    double synth_radius = 4.0;
    double synth_sigma = 0.7;
    double synth_margin_ratio = 0.0;  // when > 0, overrides synth_sigma
    double synth_rotation = 0.2;  // rotation strength in [0, 1]
    double synth_translation = 1.0;
    double synth_shift_noise = 0.3;
    int synth_patches = 16;
    int synth_attn_rows = 4;
    int synth_parts_true = 6;
    double synth_part_scale = 1.0;
    double synth_patch_noise = 0.1;
    double synth_attn_mass = 0.85;

    void validate() const;
};

// Parses JSON text over the defaults. Throws ParamError on unknown keys,
// type mismatches, or values that fail validate().
RunConfig config_from_json(const std::string& text);
RunConfig config_from_file(const std::string& path);

// Canonical dump: fixed key order, stable float formatting, diff-friendly.
std::string config_to_json(const RunConfig& c);

// FNV-1a over the canonical dump, as fixed-width hex.
std::string config_hash(const RunConfig& c);

// {"config_hash", "seed", "tool_version", "container_version"}
std::string manifest_json(const RunConfig& c);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace openparts
