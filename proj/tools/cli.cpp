#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "openparts/container.hpp"
#include "openparts/error.hpp"
#include "openparts/protocol.hpp"

namespace op = openparts;
using op::Tensor2;

namespace {

struct GlobalArgs {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_given = false;
};

op::RunConfig effective_config(const GlobalArgs& g) {
    op::RunConfig cfg;
    if (!g.config_path.empty()) cfg = op::config_from_file(g.config_path);
    if (g.seed_given) cfg.seed = g.seed;
    cfg.validate();
    return cfg;
}

void emit_manifest(const op::RunConfig& cfg, const std::string& out_path) {
    op::write_text_file(out_path + ".manifest.json", op::manifest_json(cfg));
}

void check_model_dims(const op::artifacts::Model& model, const op::RunConfig& cfg) {
    const Tensor2& w = model.params.at("clf.w");
    if (w.cols != cfg.embed_dim)
        throw op::ParamError("config embed_dim does not match the model file");
}

int run_synth(const op::RunConfig& cfg, const std::string& out) {
    op::RngState rng(cfg.seed);
    op::artifacts::SynthTask task = op::artifacts::build_task(cfg, rng);
    op::artifacts::write_task(out, task);
    emit_manifest(cfg, out);
    std::printf("synth: %d source rows, %d target rows -> %s\n", task.source.x.rows,
                task.target.x.rows, out.c_str());
    return 0;
}

int run_fit(const op::RunConfig& cfg, const std::string& task_path, const std::string& out,
            const std::string& history_path) {
    op::artifacts::SynthTask task = op::artifacts::read_task(task_path);
    std::vector<op::train::TrainExample> data = op::artifacts::task_examples(task);
    op::train::FitResult res = op::train::fit(data, cfg);

    op::artifacts::Model model{std::move(res.params), std::move(res.stats),
                               std::move(res.prototypes)};
    op::artifacts::write_model(out, model);
    emit_manifest(cfg, out);
    if (!history_path.empty())
        op::write_text_file(history_path, op::train::history_csv(res.history));

    double last = res.history.empty() ? 0.0 : res.history.back().report.total;
    std::printf("fit: %zu examples, %d epochs, final loss %.6f -> %s\n", data.size(),
                cfg.epochs, last, out.c_str());
    return 0;
}

int run_route(const op::RunConfig& cfg, const std::string& task_path,
              const std::string& model_path, const std::string& split,
              const std::string& out, const std::string& report_path) {
    op::artifacts::SynthTask task = op::artifacts::read_task(task_path);
    op::artifacts::Model model = op::artifacts::read_model(model_path);
    check_model_dims(model, cfg);

    const auto& samples = split == "source" ? task.source_samples : task.target_samples;
    if (samples.empty()) throw op::ParamError("route: the '" + split + "' split is empty");

    op::routing::RoutingParams rp = model.params.routing_view();
    op::RngState rng(cfg.seed);

    std::vector<std::vector<int>> ids;
    std::vector<Tensor2> hard, soft;
    for (const auto& s : samples) {
        auto fw = op::routing::forward(s.pfs, rp, cfg.rho, cfg.gumbel_tau,
                                       op::routing::NoiseMode::Deterministic, rng, true);
        std::vector<int> row(s.pfs.f_patch.rows);
        for (int i = 0; i < s.pfs.f_patch.rows; ++i)
            row[i] = op::math::argmax(fw.assign.h_hard.row(i), fw.assign.h_hard.cols);
        ids.push_back(std::move(row));
        hard.push_back(std::move(fw.assign.h_hard));
        soft.push_back(std::move(fw.assign.h_soft));
    }

    op::write_text_file(out, op::protocol::assignments_csv(ids));
    emit_manifest(cfg, out);

    double pue = op::routing::parts_usage_entropy(hard);
    double sue = op::routing::soft_usage_entropy(soft);
    if (!report_path.empty()) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "{\n  \"samples\": %zu,\n  \"pue\": %.17g,\n  \"soft_entropy\": %.17g\n}\n",
                      samples.size(), pue, sue);
        op::write_text_file(report_path, buf);
    }
    std::printf("route: %zu samples, usage entropy %.4f (soft %.4f) -> %s\n", samples.size(),
                pue, sue, out.c_str());
    return 0;
}

int run_ood_sample(const op::RunConfig& cfg, const std::string& model_path,
                   const std::string& out, const std::string& csv_path) {
    op::artifacts::Model model = op::artifacts::read_model(model_path);
    if (model.stats.dim == 0) throw op::ParamError("ood-sample: the model has no class stats");

    op::ood::ProposalConfig pc;
    pc.n_total = cfg.n_ood;
    pc.split = cfg.ood_split;
    pc.beta = cfg.beta_tail;
    pc.k = cfg.mix_k;
    pc.sigma = cfg.mix_sigma;

    op::RngState rng(cfg.seed);
    op::ood::OODBatch batch = op::ood::propose_ood(model.stats, pc, rng);

    op::io::TensorFile tf;
    tf.put("ood/z", batch.z);
    std::vector<int64_t> tags(batch.tag.begin(), batch.tag.end());
    tf.put_i64("ood/tag", {tags.size()}, tags.data());
    op::io::write_file(tf, out);
    emit_manifest(cfg, out);

    if (!csv_path.empty()) {
        std::string csv = "tag";
        for (int c = 0; c < batch.z.cols; ++c) csv += ",z" + std::to_string(c);
        csv += "\n";
        char num[40];
        for (int i = 0; i < batch.z.rows; ++i) {
            csv += std::to_string(batch.tag[i]);
            for (int c = 0; c < batch.z.cols; ++c) {
                std::snprintf(num, sizeof(num), ",%.17g", batch.z(i, c));
                csv += num;
            }
            csv += "\n";
        }
        op::write_text_file(csv_path, csv);
    }
    std::printf("ood-sample: %d rows -> %s\n", batch.z.rows, out.c_str());
    return 0;
}

int run_eval(const op::RunConfig& cfg, const std::string& task_path,
             const std::string& model_path, const std::string& out) {
    op::artifacts::SynthTask task = op::artifacts::read_task(task_path);
    op::artifacts::Model model = op::artifacts::read_model(model_path);
    check_model_dims(model, cfg);
    if (task.target_samples.empty() || task.target.y.empty())
        throw op::ParamError("eval: the task has no labeled target split");

    std::vector<op::routing::PatchFeatureSet> sets;
    for (const auto& s : task.target_samples) sets.push_back(s.pfs);
    Tensor2 z = op::train::embed_all(sets, model.params, cfg);

    op::RngState rng(cfg.seed);
    op::protocol::ClusterReport rep = op::protocol::evaluate_target(
        z, task.target.y, task.target.n_old_classes, model.params.classifier_view(), cfg,
        cfg.eval_k_mode == "estimate", rng);

    op::write_text_file(out, op::protocol::cluster_report_json(rep));
    emit_manifest(cfg, out);
    std::printf("eval: acc all %.4f old %.4f new %.4f, auroc(entropy) %.4f -> %s\n",
                rep.acc_all, rep.acc_old, rep.acc_new, rep.auroc_entropy, out.c_str());
    return 0;
}

int run_gradcheck(int seeds, double tol) {
    if (seeds < 1) throw op::ParamError("gradcheck: seeds must be >= 1");
    double worst = 0.0;
    for (int s = 1; s <= seeds; ++s) {
        op::train::GradCheck gc = op::train::gradcheck(static_cast<uint64_t>(s));
        worst = std::max(worst, gc.max_rel_err);
        std::printf("gradcheck seed %d: %zu parameters, max relative error %.3e [%s]\n", s,
                    gc.n_params, gc.max_rel_err, gc.max_rel_err < tol ? "ok" : "FAIL");
    }
    if (worst >= tol) {
        std::fprintf(stderr, "gradcheck failed: %.3e >= %.3e\n", worst, tol);
        return 2;
    }
    return 0;
}

int run_calib(const op::RunConfig& cfg, const std::string& task_path,
              const std::string& model_path, int bins, const std::string& hist_path,
              const std::string& out) {
    op::artifacts::SynthTask task = op::artifacts::read_task(task_path);
    op::artifacts::Model model = op::artifacts::read_model(model_path);
    check_model_dims(model, cfg);
    if (task.target_samples.empty() || task.target.y.empty())
        throw op::ParamError("calib: the task has no labeled target split");

    std::vector<op::routing::PatchFeatureSet> sets;
    for (const auto& s : task.target_samples) sets.push_back(s.pfs);
    Tensor2 z = op::train::embed_all(sets, model.params, cfg);

    op::protocol::CalibReport rep = op::protocol::calibration(
        z, task.target.y, task.target.n_old_classes, model.params.classifier_view(), cfg,
        bins);

    op::write_text_file(hist_path, op::protocol::calib_hist_csv(rep));
    op::write_text_file(out, op::protocol::calib_report_json(rep));
    emit_manifest(cfg, out);
    std::printf("calib: auroc entropy %.4f energy %.4f -> %s\n", rep.auroc_entropy,
                rep.auroc_energy, out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"part routing, outlier synthesis, and open-set clustering toolkit"};
    app.require_subcommand(0, 1);

    GlobalArgs g;
    bool print_config = false;
    app.add_option("--config", g.config_path, "JSON config file");
    auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
    app.add_flag("--print-config", print_config, "dump the effective config and exit");

    std::string task_path, model_path, out_path, history_path, report_path, csv_path,
        hist_path;
    std::string split = "target";
    int gc_seeds = 10, calib_bins = 20;
    double gc_tol = 1e-4;

    auto* synth = app.add_subcommand("synth", "generate a benchmark task file");
    synth->add_option("--out", out_path, "output task file")->required();

    auto* fit = app.add_subcommand("fit", "train on the source split of a task");
    fit->add_option("--task", task_path, "task file")->required();
    fit->add_option("--out", out_path, "output model file")->required();
    fit->add_option("--history", history_path, "loss history CSV");

    auto* route = app.add_subcommand("route", "part assignments for a feature file");
    route->add_option("--task", task_path, "task or feature file")->required();
    route->add_option("--model", model_path, "model file")->required();
    route->add_option("--split", split, "source or target")
        ->check(CLI::IsMember({"source", "target"}));
    route->add_option("--out", out_path, "assignment CSV")->required();
    route->add_option("--report", report_path, "usage entropy JSON");

    auto* oodc = app.add_subcommand("ood-sample", "draw a tagged outlier batch");
    oodc->add_option("--model", model_path, "model file")->required();
    oodc->add_option("--out", out_path, "output container file")->required();
    oodc->add_option("--csv", csv_path, "also export rows as CSV");

    auto* evalc = app.add_subcommand("eval", "cluster the target split and score it");
    evalc->add_option("--task", task_path, "task file")->required();
    evalc->add_option("--model", model_path, "model file")->required();
    evalc->add_option("--out", out_path, "report JSON")->required();

    auto* gradc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradc->add_option("--seeds", gc_seeds, "number of seeded configurations");
    gradc->add_option("--tol", gc_tol, "relative error threshold");

    auto* calibc = app.add_subcommand("calib", "entropy histograms and separation scores");
    calibc->add_option("--task", task_path, "task file")->required();
    calibc->add_option("--model", model_path, "model file")->required();
    calibc->add_option("--bins", calib_bins, "histogram bins");
    calibc->add_option("--hist", hist_path, "histogram CSV")->required();
    calibc->add_option("--out", out_path, "report JSON")->required();

    for (CLI::App* sub : {synth, fit, route, oodc, evalc, gradc, calibc}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        g.seed_given = seed_opt->count() > 0;
        op::RunConfig cfg = effective_config(g);

        if (print_config) {
            std::fputs(op::config_to_json(cfg).c_str(), stdout);
            return 0;
        }
        if (app.get_subcommands().empty()) {
            std::fputs(app.help().c_str(), stderr);
            return 1;
        }

        if (synth->parsed()) return run_synth(cfg, out_path);
        if (fit->parsed()) return run_fit(cfg, task_path, out_path, history_path);
        if (route->parsed())
            return run_route(cfg, task_path, model_path, split, out_path, report_path);
        if (oodc->parsed()) return run_ood_sample(cfg, model_path, out_path, csv_path);
        if (evalc->parsed()) return run_eval(cfg, task_path, model_path, out_path);
        if (gradc->parsed()) return run_gradcheck(gc_seeds, gc_tol);
        if (calibc->parsed())
            return run_calib(cfg, task_path, model_path, calib_bins, hist_path, out_path);
        return 1;
    } catch (const op::NumericError& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    } catch (const op::UnsupportedOpError& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    } catch (const op::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
}
