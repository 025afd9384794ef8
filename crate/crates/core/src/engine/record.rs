use std::io;
use std::path::Path;

/// One row per completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub lr: f64,
    pub loss_sup: f64,
    pub loss_spc: f64,
    pub loss_reg: f64,
    /// Mean per-pixel entropy of student predictions on a fixed subset of
    /// unlabeled images, measured at the end of the epoch.
    pub unlabeled_entropy: f64,
    pub val_dsc: f64,
    /// `None` when every test image had an undefined Hausdorff distance.
    pub val_hd: Option<f64>,
}

pub const HEADER: [&str; 10] = [
    "epoch",
    "gamma",
    "alpha",
    "lr",
    "loss_sup",
    "loss_spc",
    "loss_reg",
    "unlabeled_entropy",
    "val_dsc",
    "val_hd",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainRecord {
    pub rows: Vec<EpochRow>,
}

impl TrainRecord {
    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for r in &self.rows {
            // `{}` on f64 prints the shortest representation that round-trips
            w.write_record([
                r.epoch.to_string(),
                r.gamma.to_string(),
                r.alpha.to_string(),
                r.lr.to_string(),
                r.loss_sup.to_string(),
                r.loss_spc.to_string(),
                r.loss_reg.to_string(),
                r.unlabeled_entropy.to_string(),
                r.val_dsc.to_string(),
                r.val_hd.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv_string())
    }
}
