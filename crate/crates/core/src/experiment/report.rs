//! Training reports: structured text plus a CSV time series.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::flops::FlopsReport;
use super::metrics::MetricKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    /// Metric of the mini-batch predictions made during the epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: Method,
    pub metric: MetricKind,
    pub seed: u64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_metric: Option<f64>,
    /// Train metric minus test metric.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generalization_gap: Option<f64>,
    pub wall_clock_secs: f64,
    pub threads: usize,
    pub notes: Vec<String>,
    pub flops: FlopsReport,
    pub config: ExperimentConfig,
    pub epochs: Vec<EpochRecord>,
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricReport {
    pub fn check_finite(&self) -> Result<()> {
        let mut values = vec![
            Some(self.train_loss),
            self.train_metric,
            self.test_loss,
            self.test_metric,
            self.generalization_gap,
        ];
        for e in &self.epochs {
            values.extend([Some(e.train_loss), e.train_metric, e.val_loss, e.val_metric]);
        }
        if values.into_iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("report contains a non-finite value".into()));
        }
        Ok(())
    }

    /// Long-format rows `epoch,split,loss,metric`; the last rows hold the final train and test scores.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,metric\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},train,{},{}\n",
                e.epoch,
                e.train_loss,
                csv_cell(e.train_metric)
            ));
            if e.val_loss.is_some() {
                out.push_str(&format!(
                    "{},validation,{},{}\n",
                    e.epoch,
                    csv_cell(e.val_loss),
                    csv_cell(e.val_metric)
                ));
            }
        }
        out.push_str(&format!(
            "final,train,{},{}\n",
            self.train_loss,
            csv_cell(self.train_metric)
        ));
        if self.test_loss.is_some() {
            out.push_str(&format!(
                "final,test,{},{}\n",
                csv_cell(self.test_loss),
                csv_cell(self.test_metric)
            ));
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Data(format!("cannot serialize report: {}", e)))
    }

    /// Writes `report.toml` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let toml_path = dir.join("report.toml");
        std::fs::write(&toml_path, self.to_toml()?).map_err(|e| Error::io(&toml_path, e))?;
        let csv_path = dir.join("report.csv");
        std::fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))
    }
}
