//! Tab-separated report tables for external plotting. Output is
//! deterministic: fixed column order, fixed row order, fixed float precision.

use std::io::{self, Write};

use super::harness::EvaluationReport;

pub fn write_individual_tsv<W: Write>(w: &mut W, report: &EvaluationReport) -> io::Result<()> {
    writeln!(w, "modality\tomega_secs\tfar_mean\tfar_std\tfrr_mean\tfrr_std\tn_users")?;
    for row in &report.individual {
        writeln!(
            w,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            row.modality.tag(),
            row.omega_secs,
            row.far_mean,
            row.far_std,
            row.frr_mean,
            row.frr_std,
            row.n_users
        )?;
    }
    Ok(())
}

pub fn write_roc_tsv<W: Write>(w: &mut W, report: &EvaluationReport) -> io::Result<()> {
    writeln!(w, "variant\tomega_secs\ta0\tfar\tfrr")?;
    for curve in &report.curves {
        for p in &curve.points {
            writeln!(
                w,
                "{}\t{}\t{:.4}\t{:.6}\t{:.6}",
                curve.variant.label(),
                curve.omega_secs,
                p.a0,
                p.far,
                p.frr
            )?;
        }
    }
    Ok(())
}

pub fn write_eer_tsv<W: Write>(w: &mut W, report: &EvaluationReport) -> io::Result<()> {
    writeln!(w, "variant\tomega_secs\teer\tn_users")?;
    for row in &report.eers {
        match row.eer {
            Some(e) => writeln!(
                w,
                "{}\t{}\t{:.6}\t{}",
                row.variant.label(),
                row.omega_secs,
                e.value,
                row.n_users
            )?,
            None => writeln!(
                w,
                "{}\t{}\tunsupported\t{}",
                row.variant.label(),
                row.omega_secs,
                row.n_users
            )?,
        }
    }
    Ok(())
}

pub fn write_contributions_tsv<W: Write>(w: &mut W, report: &EvaluationReport) -> io::Result<()> {
    writeln!(w, "omega_secs\tmodality\te_full\te_without\tcontribution")?;
    for row in &report.contributions {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.6}"),
            None => "undefined".to_string(),
        };
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            row.omega_secs,
            row.modality.tag(),
            fmt(row.e_full),
            fmt(row.e_without),
            fmt(row.contribution)
        )?;
    }
    Ok(())
}

pub fn write_notices<W: Write>(w: &mut W, report: &EvaluationReport) -> io::Result<()> {
    for notice in &report.notices {
        writeln!(w, "{notice}")?;
    }
    Ok(())
}
