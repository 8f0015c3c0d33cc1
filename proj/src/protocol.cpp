#include "openparts/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "openparts/container.hpp"
#include "openparts/error.hpp"
#include "openparts/math.hpp"

namespace openparts::protocol {

using json = nlohmann::ordered_json;

ClusterReport evaluate_target(const Tensor2& z, const std::vector<int>& y, int n_old,
                              const ood::CosineClassifier& clf, const RunConfig& cfg,
                              bool with_k_estimate, RngState& rng) {
    if (static_cast<int>(y.size()) != z.rows) throw DimError("evaluate_target: label mismatch");
    if (z.rows == 0) throw ParamError("evaluate_target: empty input");

    ClusterReport r;
    int k_true = 0;
    for (int v : y) k_true = std::max(k_true, v + 1);
    r.k_used = k_true;

    eval::KMeansResult km =
        eval::kmeans(z, k_true, cfg.kmeans_restarts, cfg.kmeans_max_iter, rng);
    r.inertia = km.inertia;

    eval::MatchedAccuracy ma = eval::matched_accuracy(km.labels, y, n_old);
    r.acc_all = ma.all;
    r.acc_old = ma.old_classes;
    r.acc_new = ma.new_classes;

    Tensor2 lg = ood::logits(clf, z);
    std::vector<double> ent = eval::entropy_scores(lg, cfg.tau_temp);
    std::vector<double> en = ood::energies(lg, cfg.tau_temp);

    std::vector<double> ent_novel, ent_seen, en_novel, en_seen;
    for (int i = 0; i < z.rows; ++i) {
        if (y[i] >= n_old) {
            ent_novel.push_back(ent[i]);
            en_novel.push_back(en[i]);
        } else {
            ent_seen.push_back(ent[i]);
            en_seen.push_back(en[i]);
        }
    }
    if (!ent_novel.empty() && !ent_seen.empty()) {
        r.auroc_entropy = eval::auroc(ent_novel, ent_seen);
        r.auroc_energy = eval::auroc(en_novel, en_seen);
    }

    if (with_k_estimate) {
        int n = z.rows;
        int m = cfg.eval_k_subsample == 0 ? n : std::min(cfg.eval_k_subsample, n);
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);

        Tensor2 sub(m, z.cols);
        std::vector<int> sub_labels(m);
        for (int i = 0; i < m; ++i) {
            std::copy(z.row(idx[i]), z.row(idx[i]) + z.cols, sub.row(i));
            sub_labels[i] = y[idx[i]] < n_old ? y[idx[i]] : -1;
        }

        eval::KEstimate est;
        if (cfg.eval_k_labeled)
            est = eval::estimate_k_labeled(sub, sub_labels, n_old, cfg.eval_kmin,
                                           cfg.eval_kmax, cfg.eval_k_restarts,
                                           cfg.kmeans_max_iter, rng);
        else
            est = eval::estimate_k(sub, cfg.eval_kmin, cfg.eval_kmax, cfg.eval_k_restarts,
                                   cfg.kmeans_max_iter, rng);
        r.k_estimated = est.k;
    }
    return r;
}

std::string cluster_report_json(const ClusterReport& r) {
    json j;
    j["acc_all"] = r.acc_all;
    j["acc_old"] = r.acc_old;
    j["acc_new"] = r.acc_new;
    j["auroc_entropy"] = r.auroc_entropy;
    j["auroc_energy"] = r.auroc_energy;
    j["k_used"] = r.k_used;
    j["k_estimated"] = r.k_estimated;
    j["inertia"] = r.inertia;
    return j.dump(2) + "\n";
}

CalibReport calibration(const Tensor2& z, const std::vector<int>& y, int n_old,
                        const ood::CosineClassifier& clf, const RunConfig& cfg, int bins) {
    if (static_cast<int>(y.size()) != z.rows) throw DimError("calibration: label mismatch");
    if (bins < 1) throw ParamError("calibration: bins must be >= 1");

    Tensor2 lg = ood::logits(clf, z);
    std::vector<double> ent = eval::entropy_scores(lg, cfg.tau_temp);
    std::vector<double> en = ood::energies(lg, cfg.tau_temp);

    CalibReport r;
    double hi = std::log(static_cast<double>(clf.num_classes()));
    r.edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b) r.edges[b] = hi * b / bins;
    r.seen.assign(bins, 0);
    r.novel.assign(bins, 0);

    std::vector<double> ent_novel, ent_seen, en_novel, en_seen;
    for (int i = 0; i < z.rows; ++i) {
        int b = static_cast<int>(ent[i] / hi * bins);
        b = std::clamp(b, 0, bins - 1);
        if (y[i] >= n_old) {
            ++r.novel[b];
            ent_novel.push_back(ent[i]);
            en_novel.push_back(en[i]);
        } else {
            ++r.seen[b];
            ent_seen.push_back(ent[i]);
            en_seen.push_back(en[i]);
        }
    }
    if (!ent_novel.empty() && !ent_seen.empty()) {
        r.auroc_entropy = eval::auroc(ent_novel, ent_seen);
        r.auroc_energy = eval::auroc(en_novel, en_seen);
    }
    return r;
}

std::string calib_hist_csv(const CalibReport& r) {
    std::string out = "bin_lo,bin_hi,seen,novel\n";
    char buf[160];
    for (size_t b = 0; b + 1 < r.edges.size(); ++b) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%d\n", r.edges[b], r.edges[b + 1],
                      r.seen[b], r.novel[b]);
        out += buf;
    }
    return out;
}

std::string calib_report_json(const CalibReport& r) {
    json j;
    j["auroc_entropy"] = r.auroc_entropy;
    j["auroc_energy"] = r.auroc_energy;
    j["bins"] = r.seen.size();
    return j.dump(2) + "\n";
}

std::string assignments_csv(const std::vector<std::vector<int>>& part_ids) {
    std::string out = "sample,patch,part\n";
    char buf[96];
    for (size_t s = 0; s < part_ids.size(); ++s)
        for (size_t p = 0; p < part_ids[s].size(); ++p) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%d\n", s, p, part_ids[s][p]);
            out += buf;
        }
    return out;
}

}  // namespace openparts::protocol

namespace openparts::artifacts {

namespace {

void put_samples(io::TensorFile& tf, const std::string& prefix,
                 const std::vector<bench::SynthesizedSample>& samples) {
    if (samples.empty()) return;
    uint64_t n = samples.size();
    uint64_t np = samples[0].pfs.f_patch.rows, d = samples[0].pfs.f_patch.cols;
    uint64_t h = samples[0].pfs.a_cls.rows;

    std::vector<double> patches, attn, cls;
    std::vector<int64_t> part_id;
    patches.reserve(n * np * d);
    for (const auto& s : samples) {
        if (static_cast<uint64_t>(s.pfs.f_patch.rows) != np ||
            static_cast<uint64_t>(s.pfs.f_patch.cols) != d ||
            static_cast<uint64_t>(s.pfs.a_cls.rows) != h)
            throw DimError("write_task: ragged sample shapes");
        patches.insert(patches.end(), s.pfs.f_patch.data.begin(), s.pfs.f_patch.data.end());
        attn.insert(attn.end(), s.pfs.a_cls.data.begin(), s.pfs.a_cls.data.end());
        cls.insert(cls.end(), s.pfs.f_cls.begin(), s.pfs.f_cls.end());
        for (int v : s.part_id) part_id.push_back(v);
    }
    tf.put(prefix + "/patches", {n, np, d}, patches.data());
    tf.put(prefix + "/attn", {n, h, np}, attn.data());
    tf.put(prefix + "/cls", {n, d}, cls.data());
    if (!part_id.empty())
        tf.put_i64(prefix + "/part_id", {n, np}, part_id.data());
}

std::vector<bench::SynthesizedSample> get_samples(const io::TensorFile& tf,
                                                  const std::string& prefix) {
    std::vector<bench::SynthesizedSample> out;
    if (!tf.has(prefix + "/patches")) return out;

    const io::Entry& pe = tf.at(prefix + "/patches");
    if (pe.dims.size() != 3) throw DataError(prefix + "/patches must have rank 3", 0);
    uint64_t n = pe.dims[0];

    const io::Entry& ae = tf.at(prefix + "/attn");
    if (ae.dims.size() != 3 || ae.dims[0] != n)
        throw DataError(prefix + "/attn does not match the patch entry", 0);
    Tensor2 cls = tf.matrix(prefix + "/cls");
    if (static_cast<uint64_t>(cls.rows) != n)
        throw DataError(prefix + "/cls does not match the patch entry", 0);

    std::vector<int64_t> part_id;
    if (tf.has(prefix + "/part_id")) part_id = tf.ints(prefix + "/part_id");

    for (uint64_t i = 0; i < n; ++i) {
        bench::SynthesizedSample s;
        s.pfs.f_patch = tf.slice(prefix + "/patches", i);
        s.pfs.a_cls = tf.slice(prefix + "/attn", i);
        s.pfs.f_cls.assign(cls.row(static_cast<int>(i)), cls.row(static_cast<int>(i)) + cls.cols);
        if (!part_id.empty()) {
            uint64_t np = pe.dims[1];
            for (uint64_t p = 0; p < np; ++p)
                s.part_id.push_back(static_cast<int>(part_id[i * np + p]));
        }
        s.pfs.validate_ingest();
        out.push_back(std::move(s));
    }
    return out;
}

void put_labels(io::TensorFile& tf, const std::string& name, const std::vector<int>& y) {
    if (y.empty()) return;
    std::vector<int64_t> wide(y.begin(), y.end());
    tf.put_i64(name, {wide.size()}, wide.data());
}

std::vector<int> get_labels(const io::TensorFile& tf, const std::string& name) {
    std::vector<int> out;
    if (!tf.has(name)) return out;
    for (int64_t v : tf.ints(name)) out.push_back(static_cast<int>(v));
    return out;
}

}  // namespace

SynthTask build_task(const RunConfig& cfg, RngState& rng) {
    SynthTask task;
    bench::Generated g = bench::generate(cfg, rng);
    task.means = std::move(g.means);
    task.source = std::move(g.source);
    task.target = std::move(g.target);
    task.source_samples = bench::synthesize_all(task.source.x, cfg, rng);
    task.target_samples = bench::synthesize_all(task.target.x, cfg, rng);
    return task;
}

void write_task(const std::string& path, const SynthTask& task) {
    io::TensorFile tf;
    if (task.means.rows > 0) tf.put("means", task.means);
    if (task.source.x.rows > 0) tf.put("source/x", task.source.x);
    put_labels(tf, "source/y", task.source.y);
    if (task.target.x.rows > 0) tf.put("target/x", task.target.x);
    put_labels(tf, "target/y", task.target.y);
    tf.put_scalar("n_old_classes", task.source.n_old_classes);
    put_samples(tf, "source", task.source_samples);
    put_samples(tf, "target", task.target_samples);
    io::write_file(tf, path);
}

SynthTask read_task(const std::string& path) {
    io::TensorFile tf = io::read_file(path);
    SynthTask task;
    if (tf.has("means")) task.means = tf.matrix("means");
    if (tf.has("source/x")) task.source.x = tf.matrix("source/x");
    task.source.y = get_labels(tf, "source/y");
    if (tf.has("target/x")) task.target.x = tf.matrix("target/x");
    task.target.y = get_labels(tf, "target/y");
    int n_old = tf.has("n_old_classes") ? static_cast<int>(tf.scalar("n_old_classes")) : 0;
    task.source.n_old_classes = n_old;
    task.target.n_old_classes = n_old;
    task.source_samples = get_samples(tf, "source");
    task.target_samples = get_samples(tf, "target");
    return task;
}

void write_model(const std::string& path, const Model& m) {
    io::TensorFile tf;
    std::vector<int64_t> meta = {m.params.feat_dim, m.params.n_classes};
    tf.put_i64("meta", {2}, meta.data());
    for (size_t i = 0; i < m.params.names.size(); ++i)
        tf.put("param/" + m.params.names[i], m.params.tensors[i]);

    if (m.stats.dim > 0) {
        int c = static_cast<int>(m.stats.classes.size()), dz = m.stats.dim;
        Tensor2 mu(c, dz);
        std::vector<double> cov(static_cast<size_t>(c) * dz * dz, 0.0);
        std::vector<int64_t> init(c, 0);
        for (int y = 0; y < c; ++y) {
            const auto& pc = m.stats.classes[y];
            if (!pc.init) continue;
            init[y] = 1;
            std::copy(pc.mu.begin(), pc.mu.end(), mu.row(y));
            std::copy(pc.cov.data.begin(), pc.cov.data.end(),
                      cov.begin() + static_cast<size_t>(y) * dz * dz);
        }
        tf.put("stats/mu", mu);
        tf.put("stats/cov", {static_cast<uint64_t>(c), static_cast<uint64_t>(dz),
                             static_cast<uint64_t>(dz)},
               cov.data());
        tf.put_i64("stats/init", {static_cast<uint64_t>(c)}, init.data());
        tf.put_scalar("stats/diagonal", m.stats.diagonal ? 1.0 : 0.0);
    }
    if (m.prototypes.rows > 0) tf.put("prototypes", m.prototypes);
    io::write_file(tf, path);
}

Model read_model(const std::string& path) {
    io::TensorFile tf = io::read_file(path);
    Model m;
    std::vector<int64_t> meta = tf.ints("meta");
    if (meta.size() != 2) throw DataError("model meta entry malformed", 0);
    m.params.feat_dim = static_cast<int>(meta[0]);
    m.params.n_classes = static_cast<int>(meta[1]);

    const std::string prefix = "param/";
    for (const io::Entry& e : tf.entries) {
        if (e.name.rfind(prefix, 0) != 0) continue;
        m.params.names.push_back(e.name.substr(prefix.size()));
        m.params.tensors.push_back(tf.matrix(e.name));
    }
    if (m.params.names.empty()) throw DataError("model holds no parameters", 0);

    if (tf.has("stats/mu")) {
        Tensor2 mu = tf.matrix("stats/mu");
        std::vector<int64_t> init = tf.ints("stats/init");
        bool diag = tf.scalar("stats/diagonal") != 0.0;
        int c = mu.rows, dz = mu.cols;
        if (static_cast<int>(init.size()) != c) throw DataError("stats/init malformed", 0);
        m.stats = ood::ClassStats(c, dz, diag);
        for (int y = 0; y < c; ++y) {
            if (!init[y]) continue;
            auto& pc = m.stats.classes[y];
            pc.init = true;
            pc.mu.assign(mu.row(y), mu.row(y) + dz);
            pc.cov = tf.slice("stats/cov", static_cast<uint64_t>(y));
        }
    }
    if (tf.has("prototypes")) m.prototypes = tf.matrix("prototypes");
    return m;
}

std::vector<train::TrainExample> task_examples(const SynthTask& task) {
    if (task.source_samples.size() != task.source.y.size())
        throw DimError("task_examples: source samples and labels disagree");
    std::vector<train::TrainExample> out;
    out.reserve(task.source_samples.size());
    for (size_t i = 0; i < task.source_samples.size(); ++i)
        out.push_back({task.source_samples[i].pfs, task.source.y[i]});
    return out;
}

}  // namespace openparts::artifacts
