#include "highsync/errors.hpp"
#include "highsync/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace hp = highsync::pipeline;
namespace fs = std::filesystem;

namespace {

const std::map<std::string, bool> kOnOff{{"on", true}, {"off", false}};

void log_line(const std::string& text) { std::cerr << text << std::endl; }

void add_model_options(CLI::App* cmd, highsync::nets::ModelConfig& m) {
    cmd->add_option("--image-size", m.image_size, "Crop size in pixels")->capture_default_str();
    cmd->add_option("--base-width", m.base_width, "Denoiser width at the 16x16 level")->capture_default_str();
    cmd->add_option("--ae-width", m.ae_width, "Autoencoder width")->capture_default_str();
    cmd->add_option("--mask-fraction", m.mask_fraction, "Fraction of the crop height that is masked")
        ->capture_default_str();
    cmd->add_option("--masked-attention", m.masked_attention, "Masked temporal attention (on|off)")
        ->transform(CLI::CheckedTransformer(kOnOff))
        ->default_str("on");
    cmd->add_flag("--upper-attends", m.upper_attends, "Upper-face tokens attend instead of bypassing");
}

void add_stream_options(CLI::App* cmd, highsync::stream::StreamOptions& s) {
    cmd->add_option("--ddim-steps", s.ddim_steps, "DDIM sampling steps")->capture_default_str();
    cmd->add_option("--guidance-scale", s.guidance_scale, "Reference guidance scale")->capture_default_str();
    cmd->add_option("--sample-seed", s.seed, "Seed of the per-frame initial noise")->capture_default_str();
    cmd->add_option("--boundary", s.boundary, "Overlap handling (overwrite|average)")
        ->transform(CLI::CheckedTransformer(std::map<std::string, highsync::stream::BoundaryMode>{
            {"overwrite", highsync::stream::BoundaryMode::overwrite},
            {"average", highsync::stream::BoundaryMode::average}}))
        ->default_str("overwrite");
    cmd->add_option("--short-video", s.short_video, "Videos under 12 frames (reject|pad)")
        ->transform(CLI::CheckedTransformer(std::map<std::string, highsync::stream::ShortVideoPolicy>{
            {"reject", highsync::stream::ShortVideoPolicy::reject}, {"pad", highsync::stream::ShortVideoPolicy::pad}}))
        ->default_str("reject");
}

void add_eval_options(CLI::App* cmd, hp::EvalConfig& e) {
    cmd->add_option("--clips", e.clips, "Number of clips")->capture_default_str();
    cmd->add_option("--duration", e.duration, "Seconds per clip")->capture_default_str();
    cmd->add_option("--seed", e.seed, "Seed of the audio derangement")->capture_default_str();
    add_stream_options(cmd, e.stream);
}

void print(const highsync::Json& j) { std::cout << j.dump(2) << std::endl; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Leakage-aware audio-driven lip synchronization on synthetic faces"};
    app.set_config("--config", "", "TOML config file; command-line flags take precedence");
    app.require_subcommand(1);
    int jobs = 1;
    app.add_option("--jobs", jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    // datagen
    hp::DatagenConfig gen;
    fs::path gen_out;
    auto* c_gen = app.add_subcommand("datagen", "Render synthetic talking-face clips");
    c_gen->add_option("--out", gen_out, "Output directory")->required();
    c_gen->add_option("--clips", gen.clips)->capture_default_str();
    c_gen->add_option("--duration", gen.duration, "Seconds per clip")->capture_default_str();
    c_gen->add_option("--fps", gen.fps)->capture_default_str();
    c_gen->add_option("--size", gen.size, "Frame size in pixels")->capture_default_str();
    c_gen->add_option("--eyebrow-coupling", gen.eyebrow_coupling, "Coupling of eyebrows to the mouth, in [0, 1]")
        ->capture_default_str();
    c_gen->add_option("--audio", gen.audio, "silent|tone_sequence|envelope_random")
        ->transform(CLI::CheckedTransformer(std::map<std::string, highsync::synthgen::AudioKind>{
            {"silent", highsync::synthgen::AudioKind::silent},
            {"tone_sequence", highsync::synthgen::AudioKind::tone_sequence},
            {"envelope_random", highsync::synthgen::AudioKind::envelope_random}}))
        ->default_str("envelope_random");
    c_gen->add_option("--seed", gen.seed)->capture_default_str();

    // preprocess
    hp::PreprocessConfig pre;
    fs::path pre_in, pre_out;
    std::string crop = "per_frame", codec = "lossless";
    auto* c_pre = app.add_subcommand("preprocess", "Crop, resize and mask clips");
    c_pre->add_option("--in", pre_in, "Directory written by datagen")->required();
    c_pre->add_option("--out", pre_out, "Output directory")->required();
    c_pre->add_option("--crop-policy", crop, "per_frame|max_height")->capture_default_str();
    c_pre->add_option("--mask-codec", codec, "lossless|lossy_block")->capture_default_str();
    c_pre->add_option("--mask-fraction", pre.mask.mask_fraction)->capture_default_str();
    c_pre->add_option("--lossy-quality", pre.mask.lossy_quality)->capture_default_str();
    c_pre->add_option("--size", pre.size)->capture_default_str();

    // pretrain-ae
    hp::PretrainConfig ae;
    std::vector<fs::path> ae_data, ae_heldout;
    fs::path ae_out;
    auto* c_ae = app.add_subcommand("pretrain-ae", "Pretrain and freeze the autoencoder");
    c_ae->add_option("--data", ae_data, "Prepared directories")->required();
    c_ae->add_option("--heldout", ae_heldout, "Prepared directories for the held-out error");
    c_ae->add_option("--out", ae_out, "Output directory")->required();
    c_ae->add_option("--steps", ae.ae.steps)->capture_default_str();
    c_ae->add_option("--batch-size", ae.ae.batch_size)->capture_default_str();
    c_ae->add_option("--lr", ae.ae.learning_rate)->capture_default_str();
    c_ae->add_option("--seed", ae.ae.seed)->capture_default_str();
    c_ae->add_option("--frame-stride", ae.frame_stride)->capture_default_str();
    add_model_options(c_ae, ae.model);

    // train
    hp::TrainConfig tr;
    int stage = 1;
    std::optional<int> tr_steps, tr_batch;
    std::optional<double> tr_lr;
    fs::path tr_data, tr_init, tr_out;
    auto* c_tr = app.add_subcommand("train", "Train stage 1 (image) or stage 2 (motion)");
    c_tr->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
    c_tr->add_option("--data", tr_data, "Prepared directory")->required();
    c_tr->add_option("--init", tr_init, "Autoencoder checkpoint (stage 1) or stage-1 checkpoint (stage 2)");
    c_tr->add_option("--out", tr_out, "Output directory")->required();
    c_tr->add_option("--steps", tr_steps, "Default 2000 (stage 1) or 1000 (stage 2)");
    c_tr->add_option("--batch-size", tr_batch, "Default 16 (stage 1) or 4 (stage 2)");
    c_tr->add_option("--lr", tr_lr, "Default 2e-4");
    c_tr->add_option("--ref-dropout", tr.stage.ref_dropout_rate, "Reference dropout rate")->capture_default_str();
    c_tr->add_option("--seed", tr.stage.seed, "Sampling seed")->capture_default_str();
    c_tr->add_option("--init-seed", tr.init_seed, "Seed of freshly created groups")->capture_default_str();
    add_model_options(c_tr, tr.model);

    // infer
    hp::InferConfig inf;
    fs::path inf_ckpt, inf_clip, inf_out;
    auto* c_inf = app.add_subcommand("infer", "Lip-sync one prepared clip");
    c_inf->add_option("--checkpoint", inf_ckpt)->required();
    c_inf->add_option("--clip", inf_clip, "Prepared clip directory")->required();
    c_inf->add_option("--out", inf_out, "Output directory")->required();
    auto* inf_silent = c_inf->add_flag("--silent", inf.silent, "Drive with silent audio");
    c_inf->add_option("--audio-clip", inf.audio_clip, "Prepared clip whose audio drives the generation")
        ->excludes(inf_silent);
    add_stream_options(c_inf, inf.stream);

    // eval-silence
    hp::EvalConfig es;
    fs::path es_ckpt, es_data, es_out;
    auto* c_es = app.add_subcommand("eval-silence", "Fraction of closed-mouth frames under silent audio");
    c_es->add_option("--checkpoint", es_ckpt)->required();
    c_es->add_option("--data", es_data, "Prepared directory")->required();
    c_es->add_option("--out", es_out, "Output directory")->required();
    add_eval_options(c_es, es);

    // eval-leakage
    hp::EvalConfig el;
    std::string policy = "silent";
    fs::path el_ckpt, el_data, el_out;
    auto* c_el = app.add_subcommand("eval-leakage", "Source vs driving correlation audit");
    c_el->add_option("--checkpoint", el_ckpt)->required();
    c_el->add_option("--data", el_data, "Prepared directory")->required();
    c_el->add_option("--out", el_out, "Output directory")->required();
    c_el->add_option("--audio-policy", policy, "silent|shuffled")->capture_default_str();
    add_eval_options(c_el, el);

    // ablate
    hp::AblationConfig ab;
    fs::path ab_work;
    auto* c_ab = app.add_subcommand("ablate", "Run the remediation ablation matrix");
    c_ab->add_option("--work", ab_work, "Work directory; finished steps are reused")->required();
    c_ab->add_option("--train-clips", ab.train_data.clips)->capture_default_str();
    c_ab->add_option("--test-clips", ab.test_data.clips)->capture_default_str();
    c_ab->add_option("--eyebrow-coupling", ab.train_data.eyebrow_coupling, "Applied to train and test clips")
        ->capture_default_str();
    c_ab->add_option("--ae-steps", ab.pretrain.ae.steps)->capture_default_str();
    c_ab->add_option("--stage1-steps", ab.stage1.steps)->capture_default_str();
    c_ab->add_option("--stage2-steps", ab.stage2.steps)->capture_default_str();
    c_ab->add_option("--eval-clips", ab.eval.clips)->capture_default_str();
    c_ab->add_option("--eval-duration", ab.eval.duration)->capture_default_str();
    c_ab->add_option("--reconstruction-clips", ab.reconstruction_clips)->capture_default_str();
    c_ab->add_option("--lossy-row", ab.lossy_row, "Include the lossy-mask row (on|off)")
        ->transform(CLI::CheckedTransformer(kOnOff))
        ->default_str("on");
    c_ab->add_option("--seed", ab.seed)->capture_default_str();
    c_ab->add_option("--ddim-steps", ab.eval.stream.ddim_steps)->capture_default_str();
    c_ab->add_option("--guidance-scale", ab.eval.stream.guidance_scale)->capture_default_str();

    // report
    fs::path rep_in, rep_out;
    auto* c_rep = app.add_subcommand("report", "Render an ablation report as a markdown table");
    c_rep->add_option("--work", rep_in, "Ablation work directory")->required();
    c_rep->add_option("--out", rep_out, "Also write the table to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        torch::set_num_threads(jobs);
        if (c_gen->parsed()) {
            hp::datagen(gen, gen_out, jobs);
        } else if (c_pre->parsed()) {
            pre.policy = highsync::preprocess::parse_crop_policy(crop);
            pre.mask.codec = highsync::preprocess::parse_mask_codec(codec);
            hp::preprocess_clips(pre_in, pre_out, pre, jobs);
        } else if (c_ae->parsed()) {
            const auto r = hp::pretrain(ae_data, ae_heldout, ae_out, ae, log_line);
            print(highsync::Json{{"heldout_error", r.heldout_error}});
        } else if (c_tr->parsed()) {
            const auto seed = tr.stage.seed;
            const auto dropout = tr.stage.ref_dropout_rate;
            tr.stage = stage == 1 ? highsync::trainer::StageConfig::stage_one()
                                  : highsync::trainer::StageConfig::stage_two();
            tr.stage.seed = seed;
            tr.stage.ref_dropout_rate = dropout;
            if (tr_steps) tr.stage.steps = *tr_steps;
            if (tr_batch) tr.stage.batch_size = *tr_batch;
            if (tr_lr) tr.stage.learning_rate = *tr_lr;
            if (tr_init.empty()) {
                throw highsync::PreconditionError(stage == 2
                                                      ? "stage 2 needs a stage-1 checkpoint (--init model.ckpt)"
                                                      : "stage 1 needs an autoencoder checkpoint (--init autoencoder.ckpt)");
            }
            hp::train(tr, tr_data, tr_init, tr_out, log_line);
            print(highsync::io::read_json(tr_out / "summary.json"));
        } else if (c_inf->parsed()) {
            const auto r = hp::infer(inf_ckpt, inf_clip, inf, inf_out, log_line);
            print(highsync::Json{{"clip", r["clip"]}, {"frames", r["frames"]}, {"silent_score", r["silent_score"]}});
        } else if (c_es->parsed()) {
            auto r = hp::eval_silence(es_ckpt, es_data, es, es_out, log_line);
            r.erase("rows");
            print(r);
        } else if (c_el->parsed()) {
            auto r = hp::eval_leakage(el_ckpt, el_data, highsync::evalkit::parse_audio_policy(policy), el, el_out,
                                      log_line);
            r.erase("rows");
            r.erase("permutation");
            print(r);
        } else if (c_ab->parsed()) {
            ab.test_data.eyebrow_coupling = ab.train_data.eyebrow_coupling;
            const auto r = hp::ablate(ab, ab_work, jobs, log_line);
            std::cout << hp::render_report(r);
        } else if (c_rep->parsed()) {
            const auto path = rep_in / "report" / "report.json";
            if (!fs::exists(path)) throw highsync::PreconditionError("no ablation report at " + path.string());
            const auto table = hp::render_report(highsync::io::read_json(path));
            if (!rep_out.empty()) {
                const std::string_view text(table);
                highsync::io::write_file_atomic(
                    rep_out, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
            }
            std::cout << table;
        }
    } catch (const highsync::PreconditionError& e) {
        std::cerr << "precondition failed: " << e.what() << "\n";
        return 3;
    } catch (const highsync::InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 4;
    } catch (const highsync::InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 4;
    } catch (const highsync::DecodeError& e) {
        std::cerr << "decode error: " << e.what() << "\n";
        return 5;
    } catch (const highsync::ConfigurationError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
