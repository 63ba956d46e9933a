// Command-line front end: verification, benchmarks, protocol runs, codec margins.
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "latentlab/attention.hpp"
#include "latentlab/errors.hpp"
#include "latentlab/harness.hpp"

using namespace latentlab;

namespace {

constexpr int kExitBreach = 2;
constexpr int kExitConfig = 3;

struct Common {
    std::uint64_t seed = 0;
    int instances = 0;
    int horizon = 0;
    int threads = 0;
    std::string regime;
    std::string config;
    std::string out;
    CLI::Option* o_seed = nullptr;
    CLI::Option* o_instances = nullptr;
    CLI::Option* o_horizon = nullptr;
    CLI::Option* o_threads = nullptr;
    CLI::Option* o_regime = nullptr;
    CLI::Option* o_out = nullptr;
};

void add_common(CLI::App* sub, Common& c) {
    c.o_seed = sub->add_option("--seed", c.seed, "base seed; instance i uses seed xor i");
    c.o_instances = sub->add_option("--instances", c.instances, "number of instances / episodes");
    c.o_horizon = sub->add_option("--horizon", c.horizon, "rounds per instance (cap on T for Q-learning)");
    c.o_regime = sub->add_option("--regime", c.regime, "uniform | stratified | flat | anti_signal");
    sub->add_option("--config", c.config, "JSON run config; flags given explicitly override it");
    c.o_out = sub->add_option("--out", c.out, "output directory");
    c.o_threads = sub->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

RunConfig load(const std::string& mode, const Common& c) {
    RunConfig cfg = default_config(mode);
    if (!c.config.empty()) {
        std::ifstream f(c.config);
        if (!f) throw ConfigError("cannot read config file " + c.config);
        nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
        if (j.is_discarded()) throw ConfigError("config file " + c.config + " is not valid JSON");
        if (j.is_object() && j.contains("mode") && j["mode"] != mode)
            throw ConfigError("config file is for mode " + j["mode"].dump() + ", not " + mode);
        if (j.is_object()) j["mode"] = mode;
        cfg = RunConfig::from_json(j);
    }
    if (*c.o_seed) cfg.seed = c.seed;
    if (*c.o_instances) cfg.instances = c.instances;
    if (*c.o_horizon) cfg.horizon = c.horizon;
    if (*c.o_regime) cfg.regime = c.regime;
    if (*c.o_out) cfg.out = c.out;
    if (*c.o_threads) cfg.threads = c.threads;
    cfg.validate();
    return cfg;
}

void print_files(const BenchOutputs& b) {
    for (const auto& f : b.files) std::cout << "wrote " << f << "\n";
}

int finish_bench(const BenchOutputs& b) {
    if (b.empty) {
        std::cerr << "warning: zero instances requested; nothing written\n";
        return 0;
    }
    print_files(b);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentlab: handwired attention circuits for online learning"};
    app.require_subcommand(1);

    auto* verify = app.add_subcommand("verify", "circuit-vs-reference equivalence");
    verify->require_subcommand(1);
    Common vw, vq;
    double gamma_scale = 1.0, alpha_scale = 1.0;
    auto* verify_wma_cmd = verify->add_subcommand("wma", "weighted-majority circuit");
    add_common(verify_wma_cmd, vw);
    auto* o_gs = verify_wma_cmd->add_option("--circuit-gamma-scale", gamma_scale, "fault injection: scale the circuit's gamma");
    auto* verify_q_cmd = verify->add_subcommand("qlearn", "Q-learning circuit");
    add_common(verify_q_cmd, vq);
    auto* o_as = verify_q_cmd->add_option("--circuit-alpha-scale", alpha_scale, "fault injection: scale the circuit's alpha");

    auto* bench = app.add_subcommand("bench", "benchmarks with CSV/JSON/SVG output");
    bench->require_subcommand(1);
    Common be, bq;
    auto* bench_experts = bench->add_subcommand("experts", "expert-advice strategies, regret traces");
    add_common(bench_experts, be);
    auto* bench_q = bench->add_subcommand("qlearn", "tabular vs circuit-driven Q-learning rollouts");
    add_common(bench_q, bq);

    auto* protocol = app.add_subcommand("protocol", "prompt protocols with scripted or remote predictors");
    protocol->require_subcommand(1);
    Common pr;
    std::string framing, state, history, predictor;
    auto* protocol_run = protocol->add_subcommand("run", "run protocol episodes");
    add_common(protocol_run, pr);
    auto* o_fr = protocol_run->add_option("--framing", framing, "online | weather");
    auto* o_st = protocol_run->add_option("--state", state, "note | no_note");
    auto* o_hi = protocol_run->add_option("--history", history, "retained | free");
    auto* o_pr = protocol_run->add_option("--predictor", predictor, "always-1 | mw-wrapper | counter-note | remote");

    auto* codec = app.add_subcommand("codec", "positional codec diagnostics");
    codec->require_subcommand(1);
    int d_pe = 16, t_max = 64, offset = 1;
    double eps = 0.01;
    auto* codec_margins = codec->add_subcommand("margins", "exhaustive margin scan and chooser bounds");
    codec_margins->add_option("--d-pe", d_pe, "positional width (even)");
    codec_margins->add_option("--t-max", t_max, "maximum sequence length");
    codec_margins->add_option("--offset", offset, "chooser offset");
    codec_margins->add_option("--epsilon", eps, "chooser tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (verify_wma_cmd->parsed() || verify_q_cmd->parsed()) {
            bool wma = verify_wma_cmd->parsed();
            RunConfig cfg = load(wma ? "verify-wma" : "verify-qlearn", wma ? vw : vq);
            if (wma && *o_gs) cfg.circuit_gamma_scale = gamma_scale;
            if (!wma && *o_as) cfg.circuit_alpha_scale = alpha_scale;
            cfg.validate();
            EquivalenceReport rep = wma ? verify_wma(cfg) : verify_qlearn(cfg);
            print_files(write_equivalence(cfg, rep));
            std::printf("%s: %d episodes, %ld steps, max state dev %.3g, max prediction dev %.3g, agreement %.6f\n",
                        rep.kind.c_str(), rep.episodes, rep.steps, rep.max_state_dev, rep.max_pred_dev,
                        rep.agreement());
            if (rep.kind == "qlearn") std::printf("non-updated entries changed: %ld\n", rep.nonupdated_changed);
            if (!rep.pass()) {
                std::printf("FAIL: first divergence at episode %d step %d\n", rep.first_divergence_episode.value_or(-1),
                            rep.first_divergence_step.value_or(-1));
                return kExitBreach;
            }
            std::printf("PASS (%.2f s)\n", rep.seconds);
            return 0;
        }
        if (bench_experts->parsed()) return finish_bench(run_bench_experts(load("bench-experts", be)));
        if (bench_q->parsed()) return finish_bench(run_bench_qlearn(load("bench-qlearn", bq)));
        if (protocol_run->parsed()) {
            RunConfig cfg = load("protocol", pr);
            if (*o_fr) cfg.framing = framing;
            if (*o_st) cfg.state = state;
            if (*o_hi) cfg.history = history;
            if (*o_pr) cfg.predictor = predictor;
            cfg.validate();
            BenchOutputs b = run_protocol_command(cfg);
            int rc = finish_bench(b);
            if (!b.empty && !b.summary["failed_episodes"].empty()) {
                std::cerr << "some episodes failed; see the summary\n";
                return 1;
            }
            return rc;
        }
        if (codec_margins->parsed()) {
            PositionalCodec c = PositionalCodec::standard(d_pe, t_max);
            Margins m = margins(c, offset);
            ChooserBounds b = chooser_bounds(c, offset, eps);
            nlohmann::ordered_json j;
            j["d_pe"] = d_pe;
            j["t_max"] = t_max;
            j["offset"] = offset;
            j["epsilon"] = eps;
            j["delta_pos"] = m.delta_pos;
            j["delta_bos"] = m.delta_bos;
            j["eta_min"] = b.eta_min;
            j["xi_min"] = b.xi_min;
            std::cout << j.dump(2) << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CodecUnsoundError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const RangeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
