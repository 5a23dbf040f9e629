// Command-line front end: dataset generation, training orchestration,
// editing runs, ablation grids, checkpoints and figure/table emission.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "diffedit/checkpoint.hpp"
#include "diffedit/config.hpp"
#include "diffedit/editing.hpp"
#include "diffedit/guidance.hpp"
#include "diffedit/image_io.hpp"

using namespace diffedit;
namespace sfs = std::filesystem;

namespace {

struct Paths {
    sfs::path workdir;

    sfs::path dataset_dir() const { return workdir / "dataset"; }
    sfs::path images_dir() const { return dataset_dir() / "images"; }
    sfs::path train_manifest() const { return dataset_dir() / "train_manifest.csv"; }
    sfs::path test_manifest() const { return dataset_dir() / "test_manifest.csv"; }
    sfs::path ckpt_dir() const { return workdir / "checkpoints"; }
    sfs::path out_dir() const { return workdir / "out"; }
    sfs::path store_dir() const { return workdir / "store"; }
    sfs::path first_stage() const { return ckpt_dir() / "first_stage.ckpt"; }
    sfs::path denoiser() const { return ckpt_dir() / "denoiser.ckpt"; }
    sfs::path oracle() const { return ckpt_dir() / "oracle.ckpt"; }
    sfs::path identity() const { return ckpt_dir() / "identity.ckpt"; }
};

uint64_t effective_seed(const RunConfig& cfg) {
    if (const char* env = std::getenv("DIFFEDIT_SEED")) return std::stoull(env);
    return static_cast<uint64_t>(cfg.get_int("seed"));
}

void write_manifest(const sfs::path& artifact, const RunConfig& cfg, uint64_t seed) {
    std::string body;
    body += "artifact " + artifact.filename().string() + "\n";
    body += "config_hash " + cfg.config_hash() + "\n";
    body += "seed " + std::to_string(seed) + "\n";
    body += "version " + std::string(kCodeVersion) + "\n";
    write_text_file(artifact.string() + ".manifest", body);
}

void write_loss_csv(const sfs::path& path, const std::vector<double>& losses) {
    std::ofstream f(path);
    require(f.good(), ErrorKind::io, "cannot open " + path.string());
    f << "epoch,loss\n";
    for (size_t i = 0; i < losses.size(); ++i) f << i << "," << csv_double(losses[i]) << "\n";
}

void save_dataset(const ToyDataset& ds, const sfs::path& manifest, const sfs::path& images_dir,
                  const std::string& prefix) {
    sfs::create_directories(images_dir);
    std::ofstream f(manifest);
    require(f.good(), ErrorKind::io, "cannot open " + manifest.string());
    for (size_t i = 0; i < ds.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%06zu.pgm", prefix.c_str(), i);
        write_pgm((images_dir / name).string(), ds.images[i]);
        f << i;
        for (int64_t j = 0; j < ds.specs[i].identity.numel(); ++j)
            f << "," << format_double(ds.specs[i].identity[j]);
        f << "," << ds.labels[i] << ",images/" << name << "\n";
    }
}

ToyDataset load_dataset(const sfs::path& manifest) {
    std::ifstream f(manifest);
    require(f.good(), ErrorKind::io, "cannot open dataset manifest " + manifest.string());
    ToyDataset ds;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        size_t start = 0;
        while (true) {
            size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        require(cells.size() == 3 + kIdentityDims, ErrorKind::io,
                "manifest line has wrong field count");
        FaceSpec spec;
        spec.identity = Tensor({kIdentityDims});
        for (int j = 0; j < kIdentityDims; ++j)
            spec.identity[j] = std::stod(cells[static_cast<size_t>(1 + j)]);
        spec.emotion = std::stoi(cells[1 + kIdentityDims]);
        ds.specs.push_back(spec);
        ds.labels.push_back(spec.emotion);
        ds.images.push_back(read_pnm((manifest.parent_path() / cells.back()).string()));
    }
    require(!ds.images.empty(), ErrorKind::io, "dataset manifest is empty");
    ds.image_size = static_cast<int>(ds.images[0].shape[0]);
    return ds;
}

Tensor encode_rows(const FirstStageParams& fs, const ToyDataset& ds) {
    Tensor z0 = encode(fs, ds.images[0]);
    int64_t D = z0.numel();
    Tensor rows({static_cast<int64_t>(ds.size()), D});
    for (size_t i = 0; i < ds.size(); ++i) {
        Tensor z = encode(fs, ds.images[i]);
        for (int64_t j = 0; j < D; ++j) rows.at(static_cast<int64_t>(i), j) = z[j];
    }
    return rows;
}

int parse_label(const std::string& s) {
    if (!s.empty() && s.find_first_not_of("0123456789") == std::string::npos) {
        int v = std::stoi(s);
        require(v >= 0 && v < kNumEmotions, ErrorKind::label, "label index out of range: " + s);
        return v;
    }
    return emotion_index(s);
}

FirstStageParams load_first_stage_or_identity(const Paths& paths) {
    if (sfs::exists(paths.first_stage())) return load_first_stage(paths.first_stage().string());
    return FirstStageParams::identity();
}

// ---- commands -----------------------------------------------------------------

int cmd_gen_dataset(const RunConfig& cfg, const Paths& paths) {
    uint64_t seed = effective_seed(cfg);
    int size = cfg.get_int("data.image_size");
    ToyDataset train = make_toy_dataset(cfg.get_int("data.train_per_class"), size,
                                        RngStream(seed, 1));
    ToyDataset test = make_toy_dataset(cfg.get_int("data.test_per_class"), size,
                                       RngStream(seed, 2));
    save_dataset(train, paths.train_manifest(), paths.images_dir(), "train");
    save_dataset(test, paths.test_manifest(), paths.images_dir(), "test");
    write_manifest(paths.train_manifest(), cfg, seed);
    write_manifest(paths.test_manifest(), cfg, seed);
    std::cout << "wrote " << train.size() << " train and " << test.size() << " test faces under "
              << paths.dataset_dir().string() << "\n";
    return 0;
}

int cmd_train_oracles(const RunConfig& cfg, const Paths& paths) {
    uint64_t seed = effective_seed(cfg);
    ToyDataset train = load_dataset(paths.train_manifest());
    OracleTrainConfig ocfg;
    ocfg.epochs = cfg.get_int("oracle.epochs");
    ocfg.learning_rate = cfg.get_real("oracle.lr");
    EmotionOracle oracle = train_emotion_oracle(train, ocfg, RngStream(seed, 3));
    IdentityEmbedder embedder = train_identity_embedder(train, ocfg, RngStream(seed, 4));
    sfs::create_directories(paths.ckpt_dir());
    CheckpointMeta meta;
    meta.config_hash = cfg.config_hash();
    meta.seed = seed;
    save_oracle(paths.oracle().string(), oracle, meta);
    save_identity_embedder(paths.identity().string(), embedder, meta);
    write_manifest(paths.oracle(), cfg, seed);
    write_manifest(paths.identity(), cfg, seed);
    std::cout << "oracle -> " << paths.oracle().string() << "\n"
              << "identity embedder -> " << paths.identity().string() << "\n";
    return 0;
}

int cmd_train_first_stage(const RunConfig& cfg, const Paths& paths) {
    uint64_t seed = effective_seed(cfg);
    FirstStageMode mode = first_stage_mode_from(cfg.get_text("first_stage.mode"));
    FirstStageParams fs;
    std::vector<double> curve;
    if (mode == FirstStageMode::identity) {
        fs = FirstStageParams::identity();
    } else {
        ToyDataset train = load_dataset(paths.train_manifest());
        fs = FirstStageParams::init(mode, cfg.get_int("first_stage.f"), cfg.get_int("first_stage.c"),
                                    cfg.get_int("first_stage.hidden"),
                                    cfg.get_int("first_stage.codebook"), RngStream(seed, 10));
        FirstStageTrainConfig tcfg;
        tcfg.epochs = cfg.get_int("first_stage.epochs");
        tcfg.learning_rate = cfg.get_real("first_stage.lr");
        tcfg.batch_size = cfg.get_int("first_stage.batch");
        curve = train_first_stage(fs, train.images, tcfg, RngStream(seed, 11));
    }
    sfs::create_directories(paths.ckpt_dir());
    sfs::create_directories(paths.out_dir());
    CheckpointMeta meta;
    meta.config_hash = cfg.config_hash();
    meta.seed = seed;
    save_first_stage(paths.first_stage().string(), fs, meta);
    write_loss_csv(paths.out_dir() / "first_stage_loss.csv", curve);
    write_manifest(paths.out_dir() / "first_stage_loss.csv", cfg, seed);
    write_manifest(paths.first_stage(), cfg, seed);
    std::cout << "first stage (" << to_string(fs.mode) << ") -> " << paths.first_stage().string();
    if (!curve.empty()) std::cout << ", final l1 " << curve.back();
    std::cout << "\n";
    return 0;
}

int cmd_train_ldm(const RunConfig& cfg, const Paths& paths) {
    uint64_t seed = effective_seed(cfg);
    ToyDataset train = load_dataset(paths.train_manifest());
    FirstStageParams fs = load_first_stage_or_identity(paths);
    Tensor latents = encode_rows(fs, train);
    NoiseSchedule sched = linear_schedule(cfg.get_int("schedule.T"),
                                          cfg.get_real("schedule.beta_start"),
                                          cfg.get_real("schedule.beta_end"));
    DenoiserParams dn = DenoiserParams::init(static_cast<int>(latents.shape[1]), kNumEmotions,
                                             cfg.get_int("denoiser.width"),
                                             cfg.get_int("denoiser.blocks"), RngStream(seed, 20));
    dn.d_cls = cfg.get_int("denoiser.d_cls");
    TrainConfig tcfg;
    tcfg.p_uncond = cfg.get_real("train.p_uncond");
    tcfg.learning_rate = cfg.get_real("train.lr");
    tcfg.batch_size = cfg.get_int("train.batch");
    tcfg.epochs = cfg.get_int("train.epochs");
    tcfg.weight_decay = cfg.get_real("train.weight_decay");
    tcfg.optimizer = cfg.get_text("train.optimizer") == "plain-sgd"
                         ? TrainConfig::Optimizer::plain_sgd
                         : TrainConfig::Optimizer::adaptive_moment;
    std::vector<double> curve = run_ldm_training(dn, latents, train.labels, sched, tcfg,
                                                 RngStream(seed, 21));
    sfs::create_directories(paths.ckpt_dir());
    sfs::create_directories(paths.out_dir());
    CheckpointMeta meta;
    meta.config_hash = cfg.config_hash();
    meta.seed = seed;
    save_denoiser(paths.denoiser().string(), dn, meta);
    write_loss_csv(paths.out_dir() / "ldm_loss.csv", curve);
    write_manifest(paths.out_dir() / "ldm_loss.csv", cfg, seed);
    write_manifest(paths.denoiser(), cfg, seed);
    std::cout << "denoiser -> " << paths.denoiser().string() << ", loss " << curve.front()
              << " -> " << curve.back() << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& cfg, const Paths& paths) {
    uint64_t seed = effective_seed(cfg);
    require(sfs::exists(paths.denoiser()), ErrorKind::config,
            "finetune: base denoiser checkpoint missing at " + paths.denoiser().string());
    require(sfs::exists(paths.oracle()) && sfs::exists(paths.identity()), ErrorKind::config,
            "finetune: evaluator checkpoints missing, run train-oracles first");
    DenoiserParams base = load_denoiser(paths.denoiser().string());
    EmotionOracle oracle = load_oracle(paths.oracle().string());
    IdentityEmbedder embedder = load_identity_embedder(paths.identity().string());
    FirstStageParams fs = load_first_stage_or_identity(paths);
    ToyDataset train = load_dataset(paths.train_manifest());
    NoiseSchedule sched = linear_schedule(cfg.get_int("schedule.T"),
                                          cfg.get_real("schedule.beta_start"),
                                          cfg.get_real("schedule.beta_end"));
    FinetuneConfig fcfg;
    fcfg.lambda_dir = cfg.get_real("finetune.lambda_dir");
    fcfg.lambda_id = cfg.get_real("finetune.lambda_id");
    fcfg.lambda_l2 = cfg.get_real("finetune.lambda_l2");
    fcfg.T_tune = cfg.get_int("finetune.t_tune");
    fcfg.t0 = cfg.get_int("finetune.t0");
    fcfg.T_ddim_invert = cfg.get_int("finetune.t_ddim");
    fcfg.gamma = cfg.get_real("finetune.gamma");
    fcfg.epochs = cfg.get_int("finetune.epochs");
    fcfg.learning_rate = cfg.get_real("finetune.lr");
    fcfg.batch_size = cfg.get_int("finetune.batch");
    fcfg.precompute_per_class = cfg.get_int("finetune.per_class");
    fcfg.subsample = cfg.get_int("finetune.subsample");
    int y_trg = parse_label(cfg.get_text("finetune.target"));

    // precomputed latents are cached per key; a stale file is regenerated
    sfs::create_directories(paths.store_dir());
    char store_name[128];
    std::snprintf(store_name, sizeof(store_name), "latents_%s_t%d_s%d_g%s.bin",
                  cfg.config_hash().c_str(), fcfg.t0, fcfg.T_ddim_invert,
                  csv_double(fcfg.gamma).c_str());
    sfs::path store_path = paths.store_dir() / store_name;
    LatentStore store;
    bool need_precompute = true;
    if (sfs::exists(store_path)) {
        try {
            store = load_latent_store(store_path.string(), fcfg.t0, fcfg.T_ddim_invert, fcfg.gamma,
                                      cfg.config_hash());
            need_precompute = false;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::staleness) throw;
        }
    }
    if (need_precompute) {
        store = precompute_latents(base, fs, train, fcfg.t0, fcfg.T_ddim_invert, fcfg.gamma, sched,
                                   fcfg.precompute_per_class, cfg.config_hash());
        save_latent_store(store, store_path.string());
    }

    FinetuneResult result =
        finetune(base, store, train, y_trg, oracle, embedder, fs, sched, fcfg, RngStream(seed, 30));

    char tuned_name[128];
    std::snprintf(tuned_name, sizeof(tuned_name), "tuned_%s_g%s_ld%s.ckpt",
                  emotion_names()[static_cast<size_t>(y_trg)].c_str(),
                  csv_double(fcfg.gamma).c_str(), csv_double(fcfg.lambda_dir).c_str());
    sfs::path tuned_path = paths.ckpt_dir() / tuned_name;
    CheckpointMeta meta;
    meta.config_hash = cfg.config_hash();
    meta.seed = seed;
    meta.extra["y_trg"] = std::to_string(y_trg);
    meta.extra["gamma"] = format_double(fcfg.gamma);
    meta.extra["lambda_dir"] = format_double(fcfg.lambda_dir);
    save_denoiser(tuned_path.string(), result.params, meta);
    sfs::create_directories(paths.out_dir());
    sfs::path ft_csv = paths.out_dir() / ("finetune_loss_" + tuned_path.stem().string() + ".csv");
    write_loss_csv(ft_csv, result.epoch_losses);
    write_manifest(ft_csv, cfg, seed);
    write_manifest(tuned_path, cfg, seed);
    std::cout << "tuned model -> " << tuned_path.string() << ", loss "
              << result.epoch_losses.front() << " -> " << result.epoch_losses.back()
              << ", flagged " << result.flagged_samples << "\n";
    return 0;
}

struct EditFlags {
    std::string image_path;
    std::string dataset_path;
    int t0 = -1;
    double gamma = -1.0;
    int steps = -1;
    double eta = -1.0;
    std::string src;
    std::string trg;
    bool dump_traj = false;
    std::string model;  // optional tuned checkpoint
};

int cmd_edit(const RunConfig& cfg_in, const Paths& paths, const EditFlags& flags) {
    RunConfig cfg = cfg_in;
    if (flags.t0 >= 0) cfg.set("edit.t0", std::to_string(flags.t0));
    if (flags.gamma >= 0) cfg.set("edit.gamma", format_double(flags.gamma));
    if (flags.steps >= 0) cfg.set("edit.t_ddim", std::to_string(flags.steps));
    if (flags.eta >= 0) cfg.set("edit.eta", format_double(flags.eta));
    uint64_t seed = effective_seed(cfg);

    require(sfs::exists(paths.denoiser()) || !flags.model.empty(), ErrorKind::config,
            "edit: denoiser checkpoint missing, run train-ldm first");
    DenoiserParams dn = load_denoiser(flags.model.empty() ? paths.denoiser().string() : flags.model);
    FirstStageParams fs = load_first_stage_or_identity(paths);
    NoiseSchedule sched = linear_schedule(cfg.get_int("schedule.T"),
                                          cfg.get_real("schedule.beta_start"),
                                          cfg.get_real("schedule.beta_end"));

    std::vector<Tensor> sources;
    std::vector<int> src_labels;
    if (!flags.image_path.empty()) {
        sources.push_back(read_pnm(flags.image_path));
        require(!flags.src.empty(), ErrorKind::config, "edit: --src is required with --image");
        src_labels.push_back(parse_label(flags.src));
    } else {
        require(!flags.dataset_path.empty(), ErrorKind::config,
                "edit: one of --image or --dataset is required");
        ToyDataset ds = load_dataset(flags.dataset_path);
        size_t cap = std::min<size_t>(ds.size(), 8);
        for (size_t i = 0; i < cap; ++i) {
            sources.push_back(ds.images[i]);
            src_labels.push_back(ds.labels[i]);
        }
    }

    std::vector<int> targets;
    if (!flags.trg.empty())
        targets.push_back(parse_label(flags.trg));
    else
        for (int c = 0; c < kNumEmotions; ++c) targets.push_back(c);

    EditConfig ecfg;
    ecfg.T_ddim = cfg.get_int("edit.t_ddim");
    ecfg.t0 = cfg.get_int("edit.t0");
    ecfg.eta = cfg.get_real("edit.eta");
    ecfg.gamma = cfg.get_real("edit.gamma");
    ecfg.gamma_invert = cfg.get_real("edit.gamma_invert");

    sfs::create_directories(paths.out_dir());
    std::vector<Tensor> cells;
    std::vector<MetricsRow> rows;
    bool have_oracle = sfs::exists(paths.oracle()) && sfs::exists(paths.identity());
    EmotionOracle oracle;
    IdentityEmbedder embedder;
    if (have_oracle) {
        oracle = load_oracle(paths.oracle().string());
        embedder = load_identity_embedder(paths.identity().string());
    }

    for (size_t i = 0; i < sources.size(); ++i) {
        cells.push_back(sources[i]);
        for (int y_trg : targets) {
            EditConfig c = ecfg;
            c.y_src = src_labels[i];
            c.y_trg = y_trg;
            EditResult r = edit(fs, dn, sources[i], c, sched, RngStream(seed, 1000 + i));
            cells.push_back(r.x_gen);
            if (flags.dump_traj && i == 0 && y_trg == targets.front()) {
                write_trajectory_csv(r.invert_traj, (paths.out_dir() / "invert_traj.csv").string());
                write_trajectory_csv(r.generate_traj,
                                     (paths.out_dir() / "generate_traj.csv").string());
            }
            MetricsRow row;
            row.t0 = c.t0;
            row.gamma = c.gamma;
            row.T_ddim = c.T_ddim;
            row.y_src = c.y_src;
            row.y_trg = y_trg;
            row.psnr_db = psnr(r.x_gen, sources[i], 1.0);
            row.ssim_val = ssim(r.x_gen, sources[i]);
            if (have_oracle) {
                row.accuracy = oracle.predict(r.x_gen) == y_trg ? 1.0 : 0.0;
                row.csim_val = csim_toy(embedder, r.x_gen, sources[i]);
            }
            rows.push_back(row);
        }
    }

    sfs::path grid_path = paths.out_dir() / "edit_grid.pgm";
    write_pgm(grid_path.string(), image_grid(cells, static_cast<int>(targets.size()) + 1));
    std::string comment = "config=" + cfg.config_hash() + " seed=" + std::to_string(seed) +
                          " version=" + kCodeVersion;
    if (have_oracle)
        comment += " oracle=" + file_digest(paths.oracle().string()) +
                   " identity=" + file_digest(paths.identity().string());
    sfs::path csv_path = paths.out_dir() / "edit_metrics.csv";
    write_metrics_csv(csv_path.string(), rows, comment);
    write_manifest(grid_path, cfg, seed);
    write_manifest(csv_path, cfg, seed);
    std::cout << "grid -> " << grid_path.string() << "\nmetrics -> " << csv_path.string() << "\n";
    return 0;
}

int cmd_ablate(const RunConfig& cfg, const Paths& paths) {
    uint64_t seed = effective_seed(cfg);
    require(sfs::exists(paths.denoiser()), ErrorKind::config,
            "ablate: denoiser checkpoint missing, run train-ldm first");
    require(sfs::exists(paths.oracle()) && sfs::exists(paths.identity()), ErrorKind::config,
            "ablate: evaluator checkpoints missing, run train-oracles first");
    DenoiserParams dn = load_denoiser(paths.denoiser().string());
    EmotionOracle oracle = load_oracle(paths.oracle().string());
    IdentityEmbedder embedder = load_identity_embedder(paths.identity().string());
    FirstStageParams fs = load_first_stage_or_identity(paths);
    ToyDataset test = load_dataset(paths.test_manifest());
    NoiseSchedule sched = linear_schedule(cfg.get_int("schedule.T"),
                                          cfg.get_real("schedule.beta_start"),
                                          cfg.get_real("schedule.beta_end"));

    auto parse_list = [](const std::string& s) {
        std::vector<double> out;
        size_t start = 0;
        while (start < s.size()) {
            size_t comma = s.find(',', start);
            out.push_back(std::stod(s.substr(start, comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        require(!out.empty(), ErrorKind::config, "ablate: empty grid list");
        return out;
    };
    std::vector<double> t0s = parse_list(cfg.get_text("ablate.t0_list"));
    std::vector<double> gammas = parse_list(cfg.get_text("ablate.gamma_list"));
    int t_ddim = cfg.get_int("ablate.t_ddim");
    int threads = cfg.get_int("threads");

    std::vector<int> targets;
    if (cfg.get_text("ablate.targets") == "all")
        for (int c = 0; c < kNumEmotions; ++c) targets.push_back(c);
    else {
        std::string list = cfg.get_text("ablate.targets");
        size_t start = 0;
        while (start < list.size()) {
            size_t comma = list.find(',', start);
            targets.push_back(parse_label(list.substr(start, comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }

    size_t budget = std::min<size_t>(test.size(), static_cast<size_t>(cfg.get_int("ablate.images")));

    sfs::create_directories(paths.out_dir());
    sfs::path csv_path = paths.out_dir() / "ablate.csv";
    std::ofstream f(csv_path);
    require(f.good(), ErrorKind::io, "cannot open " + csv_path.string());
    f << "# config=" << cfg.config_hash() << " seed=" << seed << " version=" << kCodeVersion
      << " oracle=" << file_digest(paths.oracle().string())
      << " identity=" << file_digest(paths.identity().string()) << "\n";
    f << "y_trg,gamma,t0,T_ddim,psnr,ssim,csim";
    for (const auto& name : emotion_names()) f << ",frac_" << name;
    f << "\n";

    // rows sorted by (target, t0, gamma): the loop order is the sort order
    for (int y_trg : targets) {
        for (double t0 : t0s) {
            for (double gamma : gammas) {
                std::vector<size_t> items;
                for (size_t i = 0; i < budget; ++i)
                    if (test.labels[i] != y_trg) items.push_back(i);
                std::vector<double> psnrs(items.size()), ssims(items.size()), csims(items.size());
                std::vector<int> preds(items.size());
                parallel_for(
                    static_cast<int64_t>(items.size()),
                    [&](int64_t k) {
                        size_t item = items[static_cast<size_t>(k)];
                        EditConfig c;
                        c.T_ddim = t_ddim;
                        c.t0 = static_cast<int>(t0);
                        c.gamma = gamma;
                        c.eta = cfg.get_real("edit.eta");
                        c.gamma_invert = cfg.get_real("edit.gamma_invert");
                        c.y_src = test.labels[item];
                        c.y_trg = y_trg;
                        EditResult r = edit(fs, dn, test.images[item], c, sched,
                                            RngStream(seed, 2000 + item));
                        preds[static_cast<size_t>(k)] = oracle.predict(r.x_gen);
                        psnrs[static_cast<size_t>(k)] = psnr(r.x_gen, test.images[item], 1.0);
                        ssims[static_cast<size_t>(k)] = ssim(r.x_gen, test.images[item]);
                        csims[static_cast<size_t>(k)] = csim_toy(embedder, r.x_gen, test.images[item]);
                    },
                    threads);
                double ps = 0, ss = 0, cs = 0;
                std::vector<int64_t> counts(kNumEmotions, 0);
                for (size_t k = 0; k < items.size(); ++k) {
                    ps += psnrs[k];
                    ss += ssims[k];
                    cs += csims[k];
                    counts[static_cast<size_t>(preds[k])]++;
                }
                double n = static_cast<double>(items.size());
                f << emotion_names()[static_cast<size_t>(y_trg)] << "," << csv_double(gamma) << ","
                  << static_cast<int>(t0) << "," << t_ddim << "," << csv_double(ps / n) << ","
                  << csv_double(ss / n) << "," << csv_double(cs / n);
                for (int c = 0; c < kNumEmotions; ++c)
                    f << "," << csv_double(static_cast<double>(counts[static_cast<size_t>(c)]) / n);
                f << "\n";
            }
        }
    }
    f.close();
    write_manifest(csv_path, cfg, seed);
    std::cout << "ablation table -> " << csv_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy latent-diffusion emotion editing pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string workdir = ".";
    app.add_option("--config", config_path, "run configuration file (key = value)");
    app.add_option("--workdir", workdir, "root for all relative paths");

    CLI::App* gen = app.add_subcommand("gen-dataset", "render the toy face dataset");
    CLI::App* oracles = app.add_subcommand("train-oracles", "train and freeze the evaluators");
    CLI::App* first = app.add_subcommand("train-first-stage", "train the autoencoder first stage");
    CLI::App* ldm = app.add_subcommand("train-ldm", "train the conditional denoiser");
    CLI::App* fine = app.add_subcommand("finetune", "guidance-finetune a tuned copy per target");

    EditFlags ef;
    CLI::App* edit_cmd = app.add_subcommand("edit", "translate one image or a dataset slice");
    edit_cmd->add_option("--image", ef.image_path, "source image (PGM)");
    edit_cmd->add_option("--dataset", ef.dataset_path, "dataset manifest to edit");
    edit_cmd->add_option("--t0", ef.t0, "editing strength");
    edit_cmd->add_option("--gamma", ef.gamma, "guidance scale");
    edit_cmd->add_option("--steps", ef.steps, "DDIM steps");
    edit_cmd->add_option("--eta", ef.eta, "regeneration stochasticity");
    edit_cmd->add_option("--src", ef.src, "source label (name or index)");
    edit_cmd->add_option("--trg", ef.trg, "target label; omit for all-target grid");
    edit_cmd->add_option("--model", ef.model, "override denoiser checkpoint (e.g. a tuned copy)");
    edit_cmd->add_flag("--dump-traj", ef.dump_traj, "export inversion/generation trajectories as CSV");

    CLI::App* ablate = app.add_subcommand("ablate", "grid evaluation in the Table-3 layout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
        Paths paths{sfs::path(workdir)};
        sfs::create_directories(paths.workdir);
        std::cout << "# effective configuration (hash " << cfg.config_hash() << ")\n" << cfg.echo();

        if (gen->parsed()) return cmd_gen_dataset(cfg, paths);
        if (oracles->parsed()) return cmd_train_oracles(cfg, paths);
        if (first->parsed()) return cmd_train_first_stage(cfg, paths);
        if (ldm->parsed()) return cmd_train_ldm(cfg, paths);
        if (fine->parsed()) return cmd_finetune(cfg, paths);
        if (edit_cmd->parsed()) return cmd_edit(cfg, paths, ef);
        if (ablate->parsed()) return cmd_ablate(cfg, paths);
        return 2;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::numeric) {
            std::cerr << "numeric failure: " << e.what() << "\n";
            std::ofstream diag(sfs::path(workdir) / "diagnostics.txt");
            diag << "numeric failure\n" << e.what() << "\n";
            return 3;
        }
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
