//! Generate the corpus: scans, primary-frame annotation masks, the manifest,
//! ground-truth rescan offsets and a simulated reader panel.

use cribmil_core::manifest::Role;
use cribmil_core::synth::{generate_cohort, simulate_raters, Cohort};
use rayon::prelude::*;

use crate::artifacts::{csv_body, finish_stage, fresh_dir, save_mask, save_rgb, write_csv};
use crate::error::CliResult;
use crate::Ctx;

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let s = &ctx.settings;
    let dir = ctx.stage_dir("synth");
    fresh_dir(&dir)?;
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let prov = ctx.provenance("synth");

    let parts = s
        .cohorts()
        .iter()
        .map(|c| generate_cohort(c, s.seed))
        .collect::<cribmil_core::Result<Vec<_>>>()?;
    let cohort = Cohort::merge(parts)?;
    log::info!("synth: {} slides, {} scans", cohort.slides.len(), cohort.offsets().len());

    cohort.slides.par_iter().try_for_each(|g| -> CliResult<()> {
        for (plan, img) in g.scans.iter().zip(g.render_all()) {
            save_rgb(&dir.join("images").join(format!("{}.png", plan.scan_id)), &img)?;
        }
        save_mask(&dir.join("masks").join(format!("{}.png", g.slide_id)), &g.annotation_mask())
    })?;

    write_csv(&dir.join("manifest.csv"), &prov, &cohort.manifest.to_csv_string())?;
    write_csv(&dir.join("offsets.csv"), &prov, &cohort.offsets_csv())?;

    let rated: Vec<_> = cohort.manifest.slides.iter().filter(|r| r.role != Role::Train).collect();
    let truth: Vec<(bool, bool)> = rated.iter().map(|r| (r.label, r.borderline)).collect();
    let calls = if truth.is_empty() {
        Vec::new()
    } else {
        simulate_raters(&truth, s.synth.n_raters, s.seed)
    };
    let header = std::iter::once("slide_id".to_string())
        .chain((1..=s.synth.n_raters).map(|r| format!("R{r}")))
        .collect::<Vec<_>>()
        .join(",");
    let rows = rated.iter().enumerate().map(|(k, r)| {
        let mut line = r.slide_id.clone();
        for c in &calls {
            line.push(',');
            line.push(if c[k] { '1' } else { '0' });
        }
        line
    });
    write_csv(&dir.join("raters.csv"), &prov, &csv_body(&header, rows))?;
    finish_stage(&dir, &prov, s)
}
