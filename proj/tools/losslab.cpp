#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "losslab/checkpoint.hpp"
#include "losslab/curvature.hpp"
#include "losslab/data.hpp"
#include "losslab/direction.hpp"
#include "losslab/eval.hpp"
#include "losslab/model.hpp"
#include "losslab/render.hpp"
#include "losslab/surface.hpp"
#include "losslab/trainer.hpp"
#include "losslab/trajectory.hpp"
#include "losslab/util.hpp"

using namespace losslab;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << content;
    if (!f) throw std::runtime_error("short write to " + path);
}

std::string head_of(const std::string& path, size_t n = 64) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string buf(n, '\0');
    f.read(buf.data(), static_cast<std::streamsize>(n));
    buf.resize(static_cast<size_t>(f.gcount()));
    const size_t nl = buf.find('\n');
    return nl == std::string::npos ? buf : buf.substr(0, nl);
}

Model load_model(const std::string& path) { return Model(ModelSpec::parse(slurp(path))); }

std::vector<double> parse_doubles(const std::string& list) {
    std::vector<double> out;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument("cannot parse number '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty list '" + list + "'");
    return out;
}

std::vector<uint64_t> parse_seeds(const std::string& list) {
    std::vector<uint64_t> out;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        size_t used = 0;
        const uint64_t v = std::stoull(tok, &used);
        if (used != tok.size()) throw std::invalid_argument("cannot parse seed '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty seed list '" + list + "'");
    return out;
}

// Every artifact gets a <path>.meta sidecar: ordered key = value lines that
// pin tool version, inputs, seeds, and hashes. No timestamps; identical
// invocations produce identical sidecars.
struct Sidecar {
    std::vector<std::pair<std::string, std::string>> kv;

    explicit Sidecar(const std::string& command) {
        add("tool", kToolVersion);
        add("rng", Rng64::kIdentity);
        add("command", command);
    }
    void add(const std::string& k, const std::string& v) { kv.emplace_back(k, v); }
    void write(const std::string& artifact) const {
        std::string s;
        for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
        spit(artifact + ".meta", s);
    }
};

// rejects malformed or inverted ranges at parse time, with usage text
const CLI::Validator axis_check(
    [](std::string& s) -> std::string {
        try {
            AxisSpec::parse(s).validate();
        } catch (const std::exception& e) {
            return std::string(e.what());
        }
        return {};
    },
    "min:max:steps with min < max and steps >= 2", "AXIS");

AxisSpec axis_of(const std::string& s) {
    AxisSpec ax = AxisSpec::parse(s);
    ax.validate();
    return ax;
}

struct DataOpts {
    std::string kind = "two-moons";
    int64_t n_train = 1000, n_test = 500;
    double noise = 0.25;
    uint64_t seed = 1;
    std::string idx_images, idx_labels, idx_test_images, idx_test_labels;

    void wire(CLI::App* cmd) {
        cmd->add_option("--data", kind, "synthetic dataset: two-moons | gaussian-blobs | spirals")
            ->capture_default_str();
        cmd->add_option("--train-n", n_train, "training samples")->capture_default_str();
        cmd->add_option("--test-n", n_test, "test samples")->capture_default_str();
        cmd->add_option("--noise", noise, "synthetic noise level")->capture_default_str();
        cmd->add_option("--data-seed", seed, "dataset seed")->capture_default_str();
        cmd->add_option("--idx-images", idx_images, "idx image file (train split)");
        cmd->add_option("--idx-labels", idx_labels, "idx label file (train split)");
        cmd->add_option("--idx-test-images", idx_test_images, "idx image file (test split)");
        cmd->add_option("--idx-test-labels", idx_test_labels, "idx label file (test split)");
    }
    bool uses_idx() const {
        return !(idx_images.empty() && idx_labels.empty() && idx_test_images.empty() &&
                 idx_test_labels.empty());
    }
    TrainTest load() const {
        if (uses_idx()) {
            if (idx_images.empty() || idx_labels.empty() || idx_test_images.empty() ||
                idx_test_labels.empty())
                throw std::invalid_argument(
                    "idx input needs all of --idx-images, --idx-labels, --idx-test-images, "
                    "--idx-test-labels");
            return {load_idx(idx_images, idx_labels, "train"),
                    load_idx(idx_test_images, idx_test_labels, "test")};
        }
        return make_synthetic_pair(synthetic_kind_from(kind), n_train, n_test, noise, seed);
    }
    void describe(Sidecar& sc) const {
        if (uses_idx()) {
            sc.add("data", "idx");
            sc.add("idx_images", idx_images);
            sc.add("idx_labels", idx_labels);
            sc.add("idx_test_images", idx_test_images);
            sc.add("idx_test_labels", idx_test_labels);
            return;
        }
        sc.add("data", kind);
        sc.add("train_n", std::to_string(n_train));
        sc.add("test_n", std::to_string(n_test));
        sc.add("noise", fmt17(noise));
        sc.add("data_seed", std::to_string(seed));
    }
};

struct EvalFlags {
    int64_t subsample = 0, chunk = 512;
    bool serial = false;

    void wire(CLI::App* cmd) {
        cmd->add_option("--subsample", subsample,
                        "evaluate on a deterministic prefix of each split (0 = full)")
            ->capture_default_str();
        cmd->add_option("--chunk", chunk, "dataset evaluation chunk size")->capture_default_str();
        cmd->add_flag("--serial", serial, "run the cell loop serially");
    }
    EvalOptions options() const { return {!serial, chunk, subsample}; }
    void describe(Sidecar& sc) const {
        sc.add("subsample", std::to_string(subsample));
        sc.add("chunk", std::to_string(chunk));
        sc.add("parallel", serial ? "0" : "1");
    }
};

struct DirFlags {
    uint64_t seed = 1;
    std::string norm = "filter";
    std::string ignore = "biasbn";

    void wire(CLI::App* cmd, const std::string& prefix, uint64_t default_seed) {
        seed = default_seed;
        cmd->add_option("--" + prefix + "seed", seed, "direction seed")->capture_default_str();
        cmd->add_option("--" + prefix + "norm", norm, "normalization: filter | layer | none")
            ->capture_default_str();
        cmd->add_option("--" + prefix + "ignore", ignore, "ignored entries: biasbn | none")
            ->capture_default_str();
    }
    Direction make(const ParamVector& theta) const {
        Direction d = sample_gaussian(theta, seed, ignore_policy_from(ignore));
        const NormScheme s = norm_scheme_from(norm);
        if (s == NormScheme::filter) return filter_normalize(d, theta);
        if (s == NormScheme::layer) return layer_normalize(d, theta);
        return d;
    }
    void describe(Sidecar& sc, const std::string& prefix) const {
        sc.add(prefix + "seed", std::to_string(seed));
        sc.add(prefix + "norm", norm);
        sc.add(prefix + "ignore", ignore);
    }
};

struct TrainFlags {
    std::string optimizer = "sgd-nesterov";
    TrainConfig cfg;
    uint64_t init_seed = 0;

    void wire(CLI::App* cmd) {
        cmd->add_option("--optimizer", optimizer, "sgd-nesterov | adam")->capture_default_str();
        cmd->add_option("--lr", cfg.lr, "learning rate")->capture_default_str();
        cmd->add_option("--momentum", cfg.momentum, "nesterov momentum")->capture_default_str();
        cmd->add_option("--wd", cfg.weight_decay, "weight decay")->capture_default_str();
        cmd->add_option("--batch", cfg.batch_size, "minibatch size")->capture_default_str();
        cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
        cmd->add_option("--drop-epoch", cfg.lr_drop_epochs,
                        "epoch at whose start the lr drops (repeatable)");
        cmd->add_option("--drop-factor", cfg.lr_drop_factor, "lr division factor at drops")
            ->capture_default_str();
        cmd->add_option("--seed", cfg.seed, "shuffle seed")->capture_default_str();
        cmd->add_option("--init-seed", init_seed, "initialization seed")->capture_default_str();
    }
    TrainConfig config() const {
        TrainConfig c = cfg;
        c.optimizer = optimizer_from(optimizer);
        c.validate();
        return c;
    }
    void describe(Sidecar& sc) const {
        sc.add("optimizer", optimizer);
        sc.add("lr", fmt17(cfg.lr));
        sc.add("momentum", fmt17(cfg.momentum));
        sc.add("wd", fmt17(cfg.weight_decay));
        sc.add("batch", std::to_string(cfg.batch_size));
        sc.add("epochs", std::to_string(cfg.epochs));
        std::string drops;
        for (int64_t e : cfg.lr_drop_epochs) drops += (drops.empty() ? "" : ",") + std::to_string(e);
        sc.add("drop_epochs", drops.empty() ? "none" : drops);
        sc.add("drop_factor", fmt17(cfg.lr_drop_factor));
        sc.add("seed", std::to_string(cfg.seed));
        sc.add("init_seed", std::to_string(init_seed));
    }
};

uint64_t digest_of(const ParamVector& theta) { return fnv1a64_doubles(theta.values); }

std::string norms_csv(const std::vector<double>& norms) {
    std::string s = "# losslab norms v1\nstep,weight_norm\n";
    for (size_t i = 0; i < norms.size(); ++i) s += std::to_string(i) + "," + fmt17(norms[i]) + "\n";
    return s;
}

std::vector<double> read_norms_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(f, line) || line != "# losslab norms v1")
        throw std::runtime_error(path + ": not a norms file");
    if (!std::getline(f, line) || line != "step,weight_norm")
        throw std::runtime_error(path + ": bad norms header");
    std::vector<double> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const size_t comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error(path + ": bad norms row");
        out.push_back(std::stod(line.substr(comma + 1)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// subcommand bodies; CLI11 runs these as callbacks, errors propagate as
// exceptions and exit nonzero

struct TrainCmd {
    std::string model_path, out, norms_out;
    DataOpts data;
    TrainFlags tf;

    void run() const {
        const Model model = load_model(model_path);
        const TrainTest tt = data.load();
        const TrainConfig cfg = tf.config();
        const TrajectoryRecord rec = train(model, tt.train, tt.test, cfg);
        const Checkpoint& last = rec.checkpoints.back();

        save_param_vector(out, rec.final_theta(), last.epoch,
                          {{"train_loss", fmt17(last.train.loss)},
                           {"train_err", fmt17(last.train.error)},
                           {"test_loss", fmt17(last.test.loss)},
                           {"test_err", fmt17(last.test.error)},
                           {"diverged", rec.diverged ? "1" : "0"}});
        if (!norms_out.empty()) spit(norms_out, norms_csv(rec.step_weight_norms));

        Sidecar sc("train");
        sc.add("model_hash", fmt_hex64(model.meta().spec_hash));
        data.describe(sc);
        tf.describe(sc);
        sc.add("theta_digest", fmt_hex64(digest_of(rec.final_theta())));
        sc.add("diverged", rec.diverged ? "1" : "0");
        sc.add("final_train_loss", fmt17(last.train.loss));
        sc.add("final_test_err", fmt17(last.test.error));
        sc.write(out);

        std::printf("train: %" PRId64 " epochs, train loss %.6g, test err %.6g%s -> %s\n",
                    last.epoch, last.train.loss, last.test.error,
                    rec.diverged ? " (diverged)" : "", out.c_str());
    }
};

struct Ray1dCmd {
    std::string model_path, theta_path, out, save_dir, axis = "-1:1:401";
    DataOpts data;
    EvalFlags ev;
    DirFlags dir;

    void run() const {
        const Model model = load_model(model_path);
        const ParamVector theta = load_param_vector(theta_path, model);
        const TrainTest tt = data.load();
        const Direction d = dir.make(theta);
        const LossGrid g = ray_1d(model, theta, d, axis_of(axis), tt, ev.options());
        write_grid_csv(out, g);
        if (!save_dir.empty()) save_direction(save_dir, d);

        Sidecar sc("ray1d");
        sc.add("model_hash", fmt_hex64(model.meta().spec_hash));
        sc.add("theta", theta_path);
        sc.add("theta_digest", fmt_hex64(digest_of(theta)));
        data.describe(sc);
        dir.describe(sc, "dir");
        sc.add("axis0", axis_of(axis).str());
        ev.describe(sc);
        sc.write(out);
        std::printf("ray1d: %" PRId64 " cells, %" PRId64 " overflow -> %s\n", g.cells(),
                    g.overflow_cells, out.c_str());
    }
};

struct Interp1dCmd {
    std::string model_path, theta_a, theta_b, out, dirtype = "states", axis = "-0.5:1.5:201";
    DataOpts data;
    EvalFlags ev;

    void run() const {
        const Model model = load_model(model_path);
        const ParamVector a = load_param_vector(theta_a, model);
        const ParamVector b = load_param_vector(theta_b, model);
        const TrainTest tt = data.load();
        const LossGrid g =
            interpolate_1d(model, a, b, axis_of(axis), tt, dir_type_from(dirtype), ev.options());
        write_grid_csv(out, g);

        Sidecar sc("interp1d");
        sc.add("model_hash", fmt_hex64(model.meta().spec_hash));
        sc.add("theta_a", theta_a);
        sc.add("theta_a_digest", fmt_hex64(digest_of(a)));
        sc.add("theta_b", theta_b);
        sc.add("theta_b_digest", fmt_hex64(digest_of(b)));
        sc.add("dirtype", dirtype);
        data.describe(sc);
        sc.add("axis0", axis_of(axis).str());
        ev.describe(sc);
        sc.write(out);
        std::printf("interp1d: %" PRId64 " cells, %" PRId64 " overflow -> %s\n", g.cells(),
                    g.overflow_cells, out.c_str());
    }
};

struct Grid2dCmd {
    std::string model_path, theta_path, out, save_xdir, save_ydir;
    std::string xaxis = "-1:1:51", yaxis = "-1:1:51";
    DataOpts data;
    EvalFlags ev;
    DirFlags xdir, ydir;

    void run() const {
        const Model model = load_model(model_path);
        const ParamVector theta = load_param_vector(theta_path, model);
        const TrainTest tt = data.load();
        const Direction dx = xdir.make(theta);
        const Direction dy = ydir.make(theta);
        const LossGrid g =
            grid_2d(model, theta, dx, dy, axis_of(xaxis), axis_of(yaxis), tt, ev.options());
        write_grid_csv(out, g);
        if (!save_xdir.empty()) save_direction(save_xdir, dx);
        if (!save_ydir.empty()) save_direction(save_ydir, dy);

        Sidecar sc("grid2d");
        sc.add("model_hash", fmt_hex64(model.meta().spec_hash));
        sc.add("theta", theta_path);
        sc.add("theta_digest", fmt_hex64(digest_of(theta)));
        data.describe(sc);
        xdir.describe(sc, "x");
        ydir.describe(sc, "y");
        sc.add("axis0", axis_of(xaxis).str());
        sc.add("axis1", axis_of(yaxis).str());
        ev.describe(sc);
        sc.write(out);
        std::printf("grid2d: %" PRId64 " cells, %" PRId64 " overflow -> %s\n", g.cells(),
                    g.overflow_cells, out.c_str());
    }
};

struct EigmapCmd {
    std::string model_path, theta_path, out, companion, split = "train";
    std::string xaxis = "-1:1:25", yaxis = "-1:1:25";
    int64_t iterations = 100;
    double tol = 1e-6;
    uint64_t lseed = 0;
    DataOpts data;
    EvalFlags ev;
    DirFlags xdir, ydir;

    void run() const {
        const Model model = load_model(model_path);
        const ParamVector theta = load_param_vector(theta_path, model);
        const TrainTest tt = data.load();
        const Dataset& ds = split == "test" ? tt.test : tt.train;
        if (split != "train" && split != "test")
            throw std::invalid_argument("--split must be train or test");
        const Direction dx = xdir.make(theta);
        const Direction dy = ydir.make(theta);
        LanczosSettings ls;
        ls.iterations = iterations;
        ls.tol = tol;
        ls.seed = lseed;

        LossGrid comp;
        const bool with_comp = !companion.empty();
        if (with_comp) comp = read_grid_csv(companion);
        const EigRatioMap m =
            ratio_map(model, theta, dx, dy, axis_of(xaxis), axis_of(yaxis), ds, ls, ev.options(),
                      with_comp ? &comp : nullptr);
        write_ratio_csv(out, m);

        int64_t unconverged = 0;
        for (uint8_t c : m.converged) unconverged += c ? 0 : 1;
        Sidecar sc("eigmap");
        sc.add("model_hash", fmt_hex64(model.meta().spec_hash));
        sc.add("theta", theta_path);
        sc.add("theta_digest", fmt_hex64(digest_of(theta)));
        data.describe(sc);
        sc.add("split", split);
        xdir.describe(sc, "x");
        ydir.describe(sc, "y");
        sc.add("axis0", axis_of(xaxis).str());
        sc.add("axis1", axis_of(yaxis).str());
        sc.add("lanczos", ls.str());
        ev.describe(sc);
        sc.add("unconverged_cells", std::to_string(unconverged));
        sc.write(out);
        std::printf("eigmap: %" PRId64 " cells, %" PRId64 " unconverged -> %s\n", m.cells(),
                    unconverged, out.c_str());
    }
};

struct TrajCmd {
    std::string model_path, out, surface_out, svg_out, theta_out, dir1_out, dir2_out;
    std::string xaxis = "-1:1:25", yaxis = "-1:1:25";
    int level_count = 9;
    double level_cap = 10.0;
    bool log_levels = false;
    DataOpts data;
    TrainFlags tf;
    EvalFlags ev;

    void run() const {
        const Model model = load_model(model_path);
        const TrainTest tt = data.load();
        const TrajectoryRecord rec = train(model, tt.train, tt.test, tf.config());
        const PCAProjection proj = pca_directions(rec);
        write_projection_csv(out, proj);
        if (!theta_out.empty())
            save_param_vector(theta_out, rec.final_theta(), rec.checkpoints.back().epoch);
        if (!dir1_out.empty()) save_direction(dir1_out, proj.dir1);
        if (!dir2_out.empty()) save_direction(dir2_out, proj.dir2);

        if (!surface_out.empty() || !svg_out.empty()) {
            const TrajSurface ts = trajectory_surface(model, rec, proj, axis_of(xaxis),
                                                      axis_of(yaxis), tt, ev.options());
            if (!surface_out.empty()) write_grid_csv(surface_out, ts.grid);
            if (!svg_out.empty()) {
                RenderSpec spec;
                spec.kind = PlotKind::trajectory_overlay;
                spec.level_count = level_count;
                spec.level_cap = level_cap;
                spec.transform = log_levels ? Transform::log : Transform::linear;
                spec.title = "optimizer trajectory";
                spit(svg_out, trajectory_svg(ts, spec));
            }
        }

        Sidecar sc("traj");
        sc.add("model_hash", fmt_hex64(model.meta().spec_hash));
        data.describe(sc);
        tf.describe(sc);
        sc.add("theta_digest", fmt_hex64(digest_of(rec.final_theta())));
        sc.add("axis0", axis_of(xaxis).str());
        sc.add("axis1", axis_of(yaxis).str());
        ev.describe(sc);
        sc.add("var1", fmt17(proj.var1));
        sc.add("var2", fmt17(proj.var2));
        sc.add("degenerate", proj.degenerate ? "1" : "0");
        sc.write(out);
        std::printf("traj: %zu checkpoints, captured variance %.6g -> %s\n",
                    proj.epochs.size(), proj.var1 + proj.var2, out.c_str());
    }
};

struct RenderCmd {
    std::string in, out, traj_path, model_path;
    std::string kind = "auto", channel = "train_loss", levels_str, title;
    int level_count = 9, width = 720, height = 560, bins = 40;
    double level_cap = 10.0;
    bool log_scale = false;

    void run() const {
        RenderSpec spec;
        spec.channel = channel_from(channel);
        spec.transform = log_scale ? Transform::log : Transform::linear;
        spec.level_count = level_count;
        spec.level_cap = level_cap;
        if (!levels_str.empty()) spec.levels = parse_doubles(levels_str);
        spec.title = title;
        spec.width = width;
        spec.height = height;

        const std::string first = head_of(in);
        std::string svg;
        std::string resolved;
        if (first.rfind("LLABCKPT", 0) == 0) {
            resolved = "histogram";
            if (!kind_is(resolved)) throw std::invalid_argument(in + " is a checkpoint; use --kind histogram");
            if (model_path.empty())
                throw std::invalid_argument("histogram input needs --model to bind the checkpoint");
            const Model model = load_model(model_path);
            const ParamVector theta = load_param_vector(in, model);
            spec.kind = PlotKind::histogram;
            svg = histogram_svg(weight_histogram(theta, bins), spec);
        } else if (first == "# losslab eigmap v1") {
            resolved = "heat-2d";
            if (!kind_is(resolved)) throw std::invalid_argument(in + " is an eigenvalue-ratio map; it renders as heat-2d");
            spec.kind = PlotKind::heat_2d;
            svg = ratio_heat_svg(read_ratio_csv(in), spec);
        } else if (first == "# losslab norms v1") {
            resolved = "norm-curve";
            if (!kind_is(resolved)) throw std::invalid_argument(in + " is a norm series; it renders as norm-curve");
            spec.kind = PlotKind::norm_curve;
            svg = norm_curve_svg(read_norms_csv(in), spec);
        } else if (first == "# losslab grid v1") {
            const LossGrid g = read_grid_csv(in);
            if (!traj_path.empty()) {
                resolved = "trajectory-overlay";
                if (!kind_is(resolved))
                    throw std::invalid_argument("--traj requests a trajectory-overlay render");
                const PCAProjection p = read_projection_csv(traj_path);
                TrajSurface ts;
                ts.grid = g;
                ts.epochs = p.epochs;
                ts.u = p.u;
                ts.v = p.v;
                ts.var1 = p.var1;
                ts.var2 = p.var2;
                ts.is_lr_drop.assign(p.epochs.size(), 0);
                for (size_t i = 0; i < p.epochs.size(); ++i)
                    for (int64_t d : p.lr_drops)
                        if (p.epochs[i] == d) ts.is_lr_drop[i] = 1;
                spec.kind = PlotKind::trajectory_overlay;
                svg = trajectory_svg(ts, spec);
            } else if (g.axes.size() == 1) {
                resolved = "line-1d";
                if (!kind_is(resolved)) throw std::invalid_argument(in + " is a 1d profile; it renders as line-1d");
                spec.kind = PlotKind::line_1d;
                svg = line_svg(g, spec);
            } else if (kind == "heat-2d") {
                spec.kind = PlotKind::heat_2d;
                svg = heat_svg(g, spec);
            } else {
                resolved = "contour-2d";
                if (!kind_is(resolved)) throw std::invalid_argument(in + " is a 2d grid; use contour-2d or heat-2d");
                spec.kind = PlotKind::contour_2d;
                svg = contour_svg(g, spec);
            }
        } else {
            throw std::invalid_argument(in + ": unrecognized input format");
        }
        spit(out, svg);

        Sidecar sc("render");
        sc.add("input", in);
        if (!traj_path.empty()) sc.add("trajectory", traj_path);
        sc.add("kind", to_string(spec.kind));
        sc.add("channel", channel);
        sc.add("transform", to_string(spec.transform));
        if (!spec.levels.empty()) {
            std::string ls;
            for (double l : spec.levels) ls += (ls.empty() ? "" : ",") + fmt17(l);
            sc.add("levels", ls);
        } else {
            sc.add("level_count", std::to_string(spec.level_count));
            sc.add("level_cap", fmt17(spec.level_cap));
        }
        sc.add("canvas", std::to_string(width) + "x" + std::to_string(height));
        sc.write(out);
        std::printf("render: %s (%s) -> %s\n", in.c_str(), to_string(spec.kind), out.c_str());
    }

    bool kind_is(const std::string& resolved) const { return kind == "auto" || kind == resolved; }
};

struct RepeatCmd {
    std::string model_path, theta_path, out_prefix;
    std::string axis = "-1:1:401", seeds_str = "1,2,3,4,5";
    double level = 1.0;
    double level_offset = 0.0;
    bool use_offset = false;
    DataOpts data;
    EvalFlags ev;

    // train loss at the grid point nearest alpha = 0
    static double center_loss(const LossGrid& g) {
        const AxisSpec& ax = g.axes[0];
        int64_t i0 = 0;
        for (int64_t i = 1; i < ax.steps; ++i)
            if (std::fabs(ax.at(i)) < std::fabs(ax.at(i0))) i0 = i;
        return g.train_loss[g.at(i0)];
    }

    void run() const {
        const Model model = load_model(model_path);
        const ParamVector theta = load_param_vector(theta_path, model);
        const TrainTest tt = data.load();
        const std::vector<uint64_t> seeds = parse_seeds(seeds_str);
        const std::vector<LossGrid> grids =
            repeat_study(model, theta, seeds, axis_of(axis), tt, ev.options());

        std::string widths = "# losslab widths v1\nseed,level,width\n";
        double mean = 0.0;
        std::vector<double> ws;
        for (size_t i = 0; i < grids.size(); ++i) {
            write_grid_csv(out_prefix + "seed" + std::to_string(seeds[i]) + ".csv", grids[i]);
            const double lv = use_offset ? center_loss(grids[i]) + level_offset : level;
            const double w = width_at_level(grids[i], lv);
            ws.push_back(w);
            mean += w;
            widths += std::to_string(seeds[i]) + "," + fmt17(lv) + "," + fmt17(w) + "\n";
        }
        mean /= static_cast<double>(ws.size());
        double var = 0.0;
        for (double w : ws) var += (w - mean) * (w - mean);
        const double sd = ws.size() > 1 ? std::sqrt(var / static_cast<double>(ws.size() - 1)) : 0.0;
        const double cv = mean != 0.0 ? sd / mean : 0.0;

        const std::string widths_path = out_prefix + "widths.csv";
        spit(widths_path, widths);
        Sidecar sc("repeat");
        sc.add("model_hash", fmt_hex64(model.meta().spec_hash));
        sc.add("theta", theta_path);
        sc.add("theta_digest", fmt_hex64(digest_of(theta)));
        data.describe(sc);
        sc.add("axis0", axis_of(axis).str());
        if (use_offset)
            sc.add("level_offset", fmt17(level_offset));
        else
            sc.add("level", fmt17(level));
        sc.add("seeds", seeds_str);
        ev.describe(sc);
        sc.add("width_mean", fmt17(mean));
        sc.add("width_sd", fmt17(sd));
        sc.add("width_cv", fmt17(cv));
        sc.write(widths_path);
        std::printf("repeat: %zu seeds, width mean %.6g, sd %.6g, cv %.6g -> %s\n", ws.size(),
                    mean, sd, cv, widths_path.c_str());
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"loss landscape analysis toolkit"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    TrainCmd train_cmd;
    {
        auto* c = app.add_subcommand("train", "train a model and save the final checkpoint");
        c->add_option("--model", train_cmd.model_path, "model config file")->required();
        train_cmd.data.wire(c);
        train_cmd.tf.wire(c);
        c->add_option("--out", train_cmd.out, "output checkpoint")->required();
        c->add_option("--save-norms", train_cmd.norms_out, "per-step weight norm csv");
        c->callback([&] { train_cmd.run(); });
    }

    Ray1dCmd ray_cmd;
    {
        auto* c = app.add_subcommand("ray1d", "1d loss profile along a sampled direction");
        c->add_option("--model", ray_cmd.model_path, "model config file")->required();
        c->add_option("--theta", ray_cmd.theta_path, "center checkpoint")->required();
        ray_cmd.data.wire(c);
        ray_cmd.dir.wire(c, "dir", 1);
        c->add_option("--x", ray_cmd.axis, "alpha axis")->capture_default_str()->check(axis_check);
        ray_cmd.ev.wire(c);
        c->add_option("--out", ray_cmd.out, "output grid csv")->required();
        c->add_option("--save-dir", ray_cmd.save_dir, "save the direction for reuse");
        c->callback([&] { ray_cmd.run(); });
    }

    Interp1dCmd interp_cmd;
    {
        auto* c = app.add_subcommand("interp1d", "linear interpolation between two minimizers");
        c->add_option("--model", interp_cmd.model_path, "model config file")->required();
        c->add_option("--theta-a", interp_cmd.theta_a, "left checkpoint")->required();
        c->add_option("--theta-b", interp_cmd.theta_b, "right checkpoint")->required();
        c->add_option("--dirtype", interp_cmd.dirtype, "states | weights")->capture_default_str();
        interp_cmd.data.wire(c);
        c->add_option("--x", interp_cmd.axis, "alpha axis")->capture_default_str()->check(axis_check);
        interp_cmd.ev.wire(c);
        c->add_option("--out", interp_cmd.out, "output grid csv")->required();
        c->callback([&] { interp_cmd.run(); });
    }

    Grid2dCmd grid_cmd;
    {
        auto* c = app.add_subcommand("grid2d", "2d loss surface over two sampled directions");
        c->add_option("--model", grid_cmd.model_path, "model config file")->required();
        c->add_option("--theta", grid_cmd.theta_path, "center checkpoint")->required();
        grid_cmd.data.wire(c);
        grid_cmd.xdir.wire(c, "x", 1);
        grid_cmd.ydir.wire(c, "y", 2);
        c->add_option("--x", grid_cmd.xaxis, "alpha axis")->capture_default_str()->check(axis_check);
        c->add_option("--y", grid_cmd.yaxis, "beta axis")->capture_default_str()->check(axis_check);
        grid_cmd.ev.wire(c);
        c->add_option("--out", grid_cmd.out, "output grid csv")->required();
        c->add_option("--save-xdir", grid_cmd.save_xdir, "save the alpha direction");
        c->add_option("--save-ydir", grid_cmd.save_ydir, "save the beta direction");
        c->callback([&] { grid_cmd.run(); });
    }

    EigmapCmd eig_cmd;
    {
        auto* c = app.add_subcommand("eigmap", "Hessian eigenvalue-ratio map over a plane");
        c->add_option("--model", eig_cmd.model_path, "model config file")->required();
        c->add_option("--theta", eig_cmd.theta_path, "center checkpoint")->required();
        eig_cmd.data.wire(c);
        c->add_option("--split", eig_cmd.split, "train | test")->capture_default_str();
        eig_cmd.xdir.wire(c, "x", 1);
        eig_cmd.ydir.wire(c, "y", 2);
        c->add_option("--x", eig_cmd.xaxis, "alpha axis")->capture_default_str()->check(axis_check);
        c->add_option("--y", eig_cmd.yaxis, "beta axis")->capture_default_str()->check(axis_check);
        c->add_option("--iters", eig_cmd.iterations, "lanczos iteration budget")
            ->capture_default_str();
        c->add_option("--tol", eig_cmd.tol, "lanczos residual tolerance")->capture_default_str();
        c->add_option("--lseed", eig_cmd.lseed, "lanczos start-vector seed")->capture_default_str();
        eig_cmd.ev.wire(c);
        c->add_option("--companion", eig_cmd.companion,
                      "loss grid csv whose plane this map must match");
        c->add_option("--out", eig_cmd.out, "output eigmap csv")->required();
        c->callback([&] { eig_cmd.run(); });
    }

    TrajCmd traj_cmd;
    {
        auto* c = app.add_subcommand("traj", "train, then project the trajectory on its PCA plane");
        c->add_option("--model", traj_cmd.model_path, "model config file")->required();
        traj_cmd.data.wire(c);
        traj_cmd.tf.wire(c);
        c->add_option("--x", traj_cmd.xaxis, "pca-1 axis")->capture_default_str()->check(axis_check);
        c->add_option("--y", traj_cmd.yaxis, "pca-2 axis")->capture_default_str()->check(axis_check);
        traj_cmd.ev.wire(c);
        c->add_option("--out", traj_cmd.out, "output projection csv")->required();
        c->add_option("--surface", traj_cmd.surface_out, "also evaluate the loss over the plane");
        c->add_option("--svg", traj_cmd.svg_out, "render the overlay");
        c->add_option("--nlevels", traj_cmd.level_count, "contour level count for --svg")
            ->capture_default_str();
        c->add_option("--cap", traj_cmd.level_cap, "contour level cap for --svg")
            ->capture_default_str();
        c->add_flag("--log", traj_cmd.log_levels, "log-spaced contour levels for --svg");
        c->add_option("--out-theta", traj_cmd.theta_out, "save the final checkpoint");
        c->add_option("--save-dir1", traj_cmd.dir1_out, "save the first PCA direction");
        c->add_option("--save-dir2", traj_cmd.dir2_out, "save the second PCA direction");
        c->callback([&] { traj_cmd.run(); });
    }

    RenderCmd render_cmd;
    {
        auto* c = app.add_subcommand("render", "render a stored artifact to svg");
        c->add_option("--in", render_cmd.in, "grid / eigmap / norms csv or checkpoint")->required();
        c->add_option("--out", render_cmd.out, "output svg")->required();
        c->add_option("--kind", render_cmd.kind,
                      "auto | line-1d | contour-2d | heat-2d | trajectory-overlay | histogram | "
                      "norm-curve")
            ->capture_default_str();
        c->add_option("--traj", render_cmd.traj_path, "projection csv to overlay on --in");
        c->add_option("--model", render_cmd.model_path, "model config (checkpoint input only)");
        c->add_option("--channel", render_cmd.channel,
                      "train_loss | train_err | test_loss | test_err")
            ->capture_default_str();
        c->add_option("--levels", render_cmd.levels_str, "explicit contour levels, comma separated");
        c->add_option("--nlevels", render_cmd.level_count, "derived level count")
            ->capture_default_str();
        c->add_option("--cap", render_cmd.level_cap, "derived level cap")->capture_default_str();
        c->add_flag("--log", render_cmd.log_scale, "logarithmic levels / color scale");
        c->add_option("--title", render_cmd.title, "plot title");
        c->add_option("--width", render_cmd.width, "canvas width")->capture_default_str();
        c->add_option("--height", render_cmd.height, "canvas height")->capture_default_str();
        c->add_option("--bins", render_cmd.bins, "histogram bins (checkpoint input only)")
            ->capture_default_str();
        c->callback([&] { render_cmd.run(); });
    }

    RepeatCmd repeat_cmd;
    {
        auto* c = app.add_subcommand(
            "repeat", "filter-normalized 1d profiles across direction seeds, with widths");
        c->add_option("--model", repeat_cmd.model_path, "model config file")->required();
        c->add_option("--theta", repeat_cmd.theta_path, "center checkpoint")->required();
        repeat_cmd.data.wire(c);
        c->add_option("--seeds", repeat_cmd.seeds_str, "direction seeds, comma separated")
            ->capture_default_str();
        c->add_option("--x", repeat_cmd.axis, "alpha axis")->capture_default_str()->check(axis_check);
        auto* lvl = c->add_option("--level", repeat_cmd.level, "absolute loss level for widths")
                        ->capture_default_str();
        auto* off = c->add_option("--level-offset", repeat_cmd.level_offset,
                                  "measure widths at per-profile center loss plus this offset")
                        ->excludes(lvl);
        repeat_cmd.ev.wire(c);
        c->add_option("--out-prefix", repeat_cmd.out_prefix,
                      "prefix for per-seed grids and the widths csv")
            ->required();
        c->callback([&repeat_cmd, off] {
            repeat_cmd.use_offset = off->count() > 0;
            repeat_cmd.run();
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
