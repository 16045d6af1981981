use anyhow::Context as _;
use serde_json::json;
use trackletlab_core::datamodel::{read_manifest_unvalidated, validate_manifest};

use crate::cli::ValidateArgs;
use crate::config::required;
use crate::report::{emit, envelope, to_json};
use crate::{Context, Failed};

pub fn run(args: &ValidateArgs, ctx: &Context) -> anyhow::Result<()> {
    let mut c = ctx.file.validate.clone();
    args.apply(&mut c);
    let path = required(&c.manifest, "manifest")?;
    let m = read_manifest_unvalidated(path).with_context(|| format!("validate: reading {}", path.display()))?;
    let report = validate_manifest(&m, c.min_crop);
    let result = json!({
        "valid": report.is_valid(),
        "tracklets": m.tracklets.len(),
        "records": m.records.len(),
        "violations": report.violations,
    });
    emit(
        c.report.as_deref(),
        &to_json(&envelope("validate", ctx.seed, &c, result))?,
    )?;
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failed(format!("validate: {} violation(s)", report.violations.len())).into())
    }
}
