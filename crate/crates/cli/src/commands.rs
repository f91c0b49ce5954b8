use std::fs;
use std::path::{Path, PathBuf};

use icas_audit::attacks::{score_dataset, AttackConfig};
use icas_audit::fit::{drop_saturated, linear_fit, FitResult, XTransform};
use icas_audit::metrics::{evaluate, EvalReport};
use icas_audit::records::{
    read_full_records, read_records, split_calibration, write_records, DatasetManifest, Label, SampleRecord,
    DEFAULT_CALIBRATION_FRACTION,
};
use icas_audit::stats;
use icas_audit::toymodel::{draw_dataset, emit_records, sample_world, train, ToyModelParams};
use log::info;
use serde::Deserialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output;

pub const MEMBER_FILE: &str = "members.jsonl";
pub const NONMEMBER_FILE: &str = "nonmembers.jsonl";
pub const MANIFEST_FILE: &str = "manifest.toml";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub struct SimulateOutput {
    pub manifest: PathBuf,
    pub param_count: usize,
    pub final_loss: f64,
}

/// World → dataset → training → records, plus a manifest pointing at them.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateOutput, CliError> {
    let world_cfg = cfg.world_config()?;
    let train_cfg = cfg.train_config()?;
    let world = sample_world(&world_cfg)?;
    let data =
        draw_dataset(&world, cfg.world.members_per_condition, cfg.world.nonmembers_per_condition, cfg.dataset_seed())?;
    let init: ToyModelParams = train_cfg.init_params(&world);
    let (params, log) = train(&init, &data.members, &train_cfg)?;
    let final_loss = *log.losses.last().expect("loss trace starts with the initial loss");
    info!("trained {} epochs, final loss {final_loss}", train_cfg.epochs);

    let layout = &world_cfg.layout;
    let orders = &cfg.world.renyi_orders;
    let members = emit_records(&params, layout, &data.members, Label::Member, orders)?;
    let nonmembers = emit_records(&params, layout, &data.nonmembers, Label::Nonmember, orders)?;

    create_dir(&cfg.out_dir)?;
    write_records(&members, cfg.out_dir.join(MEMBER_FILE))?;
    write_records(&nonmembers, cfg.out_dir.join(NONMEMBER_FILE))?;
    let manifest = DatasetManifest {
        member_path: PathBuf::from(MEMBER_FILE),
        nonmember_path: PathBuf::from(NONMEMBER_FILE),
        seed: cfg.seed,
        calibration_fraction: cfg.eval.calibration_fraction.unwrap_or(DEFAULT_CALIBRATION_FRACTION),
    };
    let manifest_path = cfg.out_dir.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;
    info!("wrote {} members and {} non-members to {}", members.len(), nonmembers.len(), cfg.out_dir.display());
    Ok(SimulateOutput { manifest: manifest_path, param_count: params.param_count(), final_loss })
}

/// Reads one record file, checking each label against the file's role.
/// Records labelled `unknown` take the role's label.
fn load_side(path: &Path, role: Label) -> Result<Vec<SampleRecord>, CliError> {
    let mut out = Vec::new();
    for rec in read_records(path)? {
        let mut rec = rec?;
        match rec.label {
            Label::Unknown => rec.label = role,
            l if l != role => {
                return Err(CliError::Data(format!(
                    "{}: sample `{}` is labelled {} in the {} file",
                    path.display(),
                    rec.sample_id,
                    l.as_str(),
                    role.as_str()
                )))
            }
            _ => {}
        }
        out.push(rec);
    }
    Ok(out)
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Members first, then non-members, each in file order.
    pub records: Vec<SampleRecord>,
    pub n_member: usize,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let manifest = DatasetManifest::load(cfg.manifest_path())?;
    let mut records = load_side(&manifest.member_path, Label::Member)?;
    let n_member = records.len();
    records.extend(load_side(&manifest.nonmember_path, Label::Nonmember)?);
    info!("loaded {n_member} members and {} non-members", records.len() - n_member);
    Ok(Dataset { manifest, records, n_member })
}

/// Writes `scores_<slug>.csv` for every attack; returns the paths.
pub fn score(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let attacks = cfg.validated_attacks()?;
    let filter = cfg.scale_filter()?;
    let data = load_dataset(cfg)?;
    create_dir(&cfg.out_dir)?;
    let mut paths = Vec::new();
    for attack in attacks {
        let scores = score_dataset(&data.records, attack, &filter)?;
        let path = cfg.out_dir.join(format!("scores_{}.csv", attack.slug()));
        output::write_scores(&path, &scores)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Scores, splits and evaluates every attack, then writes `metrics.csv`,
/// `roc_<slug>.csv` and `report.md`.
pub fn eval(cfg: &RunConfig) -> Result<Vec<(AttackConfig, EvalReport)>, CliError> {
    let attacks = cfg.validated_attacks()?;
    let filter = cfg.scale_filter()?;
    let budgets = cfg.fpr_budgets()?;
    let data = load_dataset(cfg)?;
    let fraction = cfg.eval.calibration_fraction.unwrap_or(data.manifest.calibration_fraction);
    let ids: Vec<String> = data.records.iter().map(|r| r.sample_id.clone()).collect();
    let (member_ids, nonmember_ids) = ids.split_at(data.n_member);
    let split = split_calibration(member_ids, nonmember_ids, data.manifest.seed, fraction)?;

    create_dir(&cfg.out_dir)?;
    let mut rows = Vec::new();
    for attack in attacks {
        let scores = score_dataset(&data.records, attack, &filter)?;
        let report = evaluate(&scores, &split, budgets)?;
        output::write_roc(&cfg.out_dir.join(format!("roc_{}.csv", attack.slug())), &report.roc)?;
        info!("{attack}: AUROC {:.4}, ASR {:.4}", report.auroc, report.asr);
        rows.push((*attack, report));
    }
    output::write_metrics(&cfg.out_dir.join("metrics.csv"), &rows)?;
    output::write_text(&cfg.out_dir.join("report.md"), &output::render_report(&rows, budgets))?;
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct FitPoint {
    x: f64,
    auroc: f64,
}

/// Fits `auroc = slope · x + intercept` to the `x,auroc` CSV named in
/// `[fit] input` and writes `fit_summary.txt`.
pub fn fit(cfg: &RunConfig) -> Result<FitResult, CliError> {
    let input = cfg.fit.input.as_ref().ok_or_else(|| CliError::Config("fit.input is required".into()))?;
    let transform: XTransform =
        cfg.fit.x_transform.parse().map_err(|e| CliError::Config(format!("fit.x_transform: {e}")))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(input)?;
    let mut points = Vec::new();
    for row in reader.deserialize() {
        let p: FitPoint = row?;
        points.push((transform.apply(p.x)?, p.auroc));
    }
    if let Some(max) = cfg.fit.max_auroc {
        let before = points.len();
        points = drop_saturated(&points, max);
        info!("dropped {} points above AUROC {max}", before - points.len());
    }
    let result = linear_fit(&points)?;
    create_dir(&cfg.out_dir)?;
    output::write_text(&cfg.out_dir.join("fit_summary.txt"), &output::render_fit(&result))?;
    Ok(result)
}

/// Full-distribution records → canonical records.
pub fn convert(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let input = cfg.convert.input.as_ref().ok_or_else(|| CliError::Config("convert.input is required".into()))?;
    let orders = cfg.convert.alphas.as_ref().unwrap_or(&cfg.world.renyi_orders);
    let output = cfg.convert.output.clone().unwrap_or_else(|| cfg.out_dir.join("records.jsonl"));
    let mut records = Vec::new();
    for full in read_full_records(input)? {
        records.push(stats::summarize(&full?, orders)?);
    }
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_records(&records, &output)?;
    info!("converted {} records to {}", records.len(), output.display());
    Ok(output)
}
