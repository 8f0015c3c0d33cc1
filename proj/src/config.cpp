#include "openparts/config.hpp"

#include <cstdio>
#include <filesystem>

#include "json.hpp"
#include "openparts/container.hpp"
#include "openparts/error.hpp"

namespace openparts {

using json = nlohmann::ordered_json;

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ParamError("config: " + msg); };
    if (!(rho > 0.0 && rho <= 1.0)) fail("rho must lie in (0, 1]");
    if (parts < 1) fail("parts must be >= 1");
    if (gumbel_tau <= 0.0) fail("gumbel_tau must be positive");
    if (attn_heads < 1) fail("attn_heads must be >= 1");
    if (fusion_hidden < 1 || embed_dim < 1) fail("projection sizes must be >= 1");
    if (n_ood < 0) fail("n_ood must be >= 0");
    if (ood_split.size() != 3) fail("ood_split needs exactly 3 weights");
    double split_sum = 0.0;
    for (double w : ood_split) {
        if (w < 0.0) fail("ood_split weights must be >= 0");
        split_sum += w;
    }
    if (split_sum <= 0.0) fail("ood_split weights must not all be zero");
    if (beta_tail < 1.0) fail("beta_tail must be >= 1");
    if (mix_k < 1) fail("mix_k must be >= 1");
    if (mix_sigma < 0.0) fail("mix_sigma must be >= 0");
    if (alpha_mean < 0.0 || alpha_mean > 1.0) fail("alpha_mean must lie in [0, 1]");
    if (alpha_cov < 0.0 || alpha_cov > 1.0) fail("alpha_cov must lie in [0, 1]");
    if (tau_temp <= 0.0 || tau_c <= 0.0) fail("temperatures must be positive");
    if (gamma_init <= 0.0) fail("gamma_init must be positive");
    if (lambda_nce < 0.0 || lambda_scon < 0.0 || lambda_ce < 0.0 || lambda_oe < 0.0 ||
        lambda_ent < 0.0)
        fail("loss weights must be >= 0");
    if (lr <= 0.0) fail("lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) fail("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) fail("weight_decay must be >= 0");
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (view_jitter < 0.0) fail("view_jitter must be >= 0");
    if (view_dropout < 0.0 || view_dropout >= 1.0) fail("view_dropout must lie in [0, 1)");
    if (kmeans_restarts < 1 || kmeans_max_iter < 1) fail("kmeans settings must be >= 1");
    if (eval_kmin < 2) fail("eval_kmin must be >= 2");
    if (eval_kmax < eval_kmin) fail("eval_kmax must be >= eval_kmin");
    if (eval_k_mode != "known" && eval_k_mode != "estimate")
        fail("eval_k_mode must be 'known' or 'estimate'");
    if (eval_k_subsample < 0) fail("eval_k_subsample must be >= 0");
    if (eval_k_restarts < 1) fail("eval_k_restarts must be >= 1");
    if (synth_dim < 2) fail("synth_dim must be >= 2");
    if (synth_classes < 2) fail("synth_classes must be >= 2");
    if (synth_known < 1 || synth_known > synth_classes)
        fail("synth_known must lie in [1, synth_classes]");
    if (synth_per_class < 1) fail("synth_per_class must be >= 1");
    if (synth_radius <= 0.0) fail("synth_radius must be positive");
    if (synth_sigma < 0.0) fail("synth_sigma must be >= 0");
    if (synth_margin_ratio < 0.0) fail("synth_margin_ratio must be >= 0");
    if (synth_rotation < 0.0 || synth_rotation > 1.0)
        fail("synth_rotation must lie in [0, 1]");
    if (synth_translation < 0.0) fail("synth_translation must be >= 0");
    if (synth_shift_noise < 0.0) fail("synth_shift_noise must be >= 0");
    if (synth_patches < 1) fail("synth_patches must be >= 1");
    if (synth_attn_rows < 1) fail("synth_attn_rows must be >= 1");
    if (synth_parts_true < 1 || synth_parts_true > synth_patches)
        fail("synth_parts_true must lie in [1, synth_patches]");
    if (synth_part_scale < 0.0) fail("synth_part_scale must be >= 0");
    if (synth_patch_noise < 0.0) fail("synth_patch_noise must be >= 0");
    if (synth_attn_mass <= 0.0 || synth_attn_mass > 1.0)
        fail("synth_attn_mass must lie in (0, 1]");
}

namespace {

json to_tree(const RunConfig& c) {
    json j;
    j["rho"] = c.rho;
    j["parts"] = c.parts;
    j["gumbel_tau"] = c.gumbel_tau;
    j["tau_anneal"] = c.tau_anneal;
    j["attn_heads"] = c.attn_heads;
    j["fusion_hidden"] = c.fusion_hidden;
    j["embed_dim"] = c.embed_dim;
    j["margin"] = c.margin;
    j["n_ood"] = c.n_ood;
    j["ood_split"] = c.ood_split;
    j["beta_tail"] = c.beta_tail;
    j["mix_k"] = c.mix_k;
    j["mix_sigma"] = c.mix_sigma;
    j["alpha_mean"] = c.alpha_mean;
    j["alpha_cov"] = c.alpha_cov;
    j["cov_diagonal"] = c.cov_diagonal;
    j["tau_temp"] = c.tau_temp;
    j["gamma_init"] = c.gamma_init;
    j["lambda_nce"] = c.lambda_nce;
    j["lambda_scon"] = c.lambda_scon;
    j["lambda_ce"] = c.lambda_ce;
    j["lambda_oe"] = c.lambda_oe;
    j["lambda_ent"] = c.lambda_ent;
    j["tau_c"] = c.tau_c;
    j["lr"] = c.lr;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["view_jitter"] = c.view_jitter;
    j["view_dropout"] = c.view_dropout;
    j["kmeans_restarts"] = c.kmeans_restarts;
    j["kmeans_max_iter"] = c.kmeans_max_iter;
    j["eval_kmin"] = c.eval_kmin;
    j["eval_kmax"] = c.eval_kmax;
    j["eval_k_mode"] = c.eval_k_mode;
    j["eval_k_labeled"] = c.eval_k_labeled;
    j["eval_k_subsample"] = c.eval_k_subsample;
    j["eval_k_restarts"] = c.eval_k_restarts;
    j["synth_dim"] = c.synth_dim;
    j["synth_classes"] = c.synth_classes;
    j["synth_known"] = c.synth_known;
    j["synth_per_class"] = c.synth_per_class;
    j["synth_radius"] = c.synth_radius;
    j["synth_sigma"] = c.synth_sigma;
    j["synth_margin_ratio"] = c.synth_margin_ratio;
    j["synth_rotation"] = c.synth_rotation;
    j["synth_translation"] = c.synth_translation;
    j["synth_shift_noise"] = c.synth_shift_noise;
    j["synth_patches"] = c.synth_patches;
    j["synth_attn_rows"] = c.synth_attn_rows;
    j["synth_parts_true"] = c.synth_parts_true;
    j["synth_part_scale"] = c.synth_part_scale;
    j["synth_patch_noise"] = c.synth_patch_noise;
    j["synth_attn_mass"] = c.synth_attn_mass;
    return j;
}

template <typename T>
void read_key(const json& j, const std::string& key, T& out) {
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParamError("config key '" + key + "': " + e.what());
    }
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParamError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParamError("config root must be a JSON object");

    RunConfig c;
    json known = to_tree(c);
    for (const auto& item : j.items()) {
        if (!known.contains(item.key()))
            throw ParamError("config: unknown key '" + item.key() + "'");
    }

    auto opt = [&](const std::string& key, auto& out) {
        if (j.contains(key)) read_key(j, key, out);
    };
    opt("rho", c.rho);
    opt("parts", c.parts);
    opt("gumbel_tau", c.gumbel_tau);
    opt("tau_anneal", c.tau_anneal);
    opt("attn_heads", c.attn_heads);
    opt("fusion_hidden", c.fusion_hidden);
    opt("embed_dim", c.embed_dim);
    opt("margin", c.margin);
    opt("n_ood", c.n_ood);
    opt("ood_split", c.ood_split);
    opt("beta_tail", c.beta_tail);
    opt("mix_k", c.mix_k);
    opt("mix_sigma", c.mix_sigma);
    opt("alpha_mean", c.alpha_mean);
    opt("alpha_cov", c.alpha_cov);
    opt("cov_diagonal", c.cov_diagonal);
    opt("tau_temp", c.tau_temp);
    opt("gamma_init", c.gamma_init);
    opt("lambda_nce", c.lambda_nce);
    opt("lambda_scon", c.lambda_scon);
    opt("lambda_ce", c.lambda_ce);
    opt("lambda_oe", c.lambda_oe);
    opt("lambda_ent", c.lambda_ent);
    opt("tau_c", c.tau_c);
    opt("lr", c.lr);
    opt("momentum", c.momentum);
    opt("weight_decay", c.weight_decay);
    opt("epochs", c.epochs);
    opt("batch_size", c.batch_size);
    opt("seed", c.seed);
    opt("view_jitter", c.view_jitter);
    opt("view_dropout", c.view_dropout);
    opt("kmeans_restarts", c.kmeans_restarts);
    opt("kmeans_max_iter", c.kmeans_max_iter);
    opt("eval_kmin", c.eval_kmin);
    opt("eval_kmax", c.eval_kmax);
    opt("eval_k_mode", c.eval_k_mode);
    opt("eval_k_labeled", c.eval_k_labeled);
    opt("eval_k_subsample", c.eval_k_subsample);
    opt("eval_k_restarts", c.eval_k_restarts);
    opt("synth_dim", c.synth_dim);
    opt("synth_classes", c.synth_classes);
    opt("synth_known", c.synth_known);
    opt("synth_per_class", c.synth_per_class);
    opt("synth_radius", c.synth_radius);
    opt("synth_sigma", c.synth_sigma);
    opt("synth_margin_ratio", c.synth_margin_ratio);
    opt("synth_rotation", c.synth_rotation);
    opt("synth_translation", c.synth_translation);
    opt("synth_shift_noise", c.synth_shift_noise);
    opt("synth_patches", c.synth_patches);
    opt("synth_attn_rows", c.synth_attn_rows);
    opt("synth_parts_true", c.synth_parts_true);
    opt("synth_part_scale", c.synth_part_scale);
    opt("synth_patch_noise", c.synth_patch_noise);
    opt("synth_attn_mass", c.synth_attn_mass);

    c.validate();
    return c;
}

RunConfig config_from_file(const std::string& path) {
    return config_from_json(read_text_file(path));
}

std::string config_to_json(const RunConfig& c) { return to_tree(c).dump(2) + "\n"; }

std::string config_hash(const RunConfig& c) {
    std::string text = config_to_json(c);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string manifest_json(const RunConfig& c) {
    json j;
    j["config_hash"] = config_hash(c);
    j["seed"] = c.seed;
    j["tool_version"] = kToolVersion;
    j["container_version"] = io::kContainerVersion;
    return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& text) {
    std::filesystem::path target(path);
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    FILE* f = std::fopen(tmp.string().c_str(), "wb");
    if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
    size_t written = std::fwrite(text.data(), 1, text.size(), f);
    int rc = std::fclose(f);
    if (written != text.size() || rc != 0) {
        std::filesystem::remove(tmp);
        throw IoError("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
    }
}

std::string read_text_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open '" + path + "'");
    std::fseek(f, 0, SEEK_END);
    long sz = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::string out(sz > 0 ? static_cast<size_t>(sz) : 0, '\0');
    size_t got = out.empty() ? 0 : std::fread(out.data(), 1, out.size(), f);
    std::fclose(f);
    if (got != out.size()) throw IoError("short read from '" + path + "'");
    return out;
}

}  // namespace openparts
