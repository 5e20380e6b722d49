//! Per-epoch, per-layer records emitted by every training path.

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean local training loss per layer over the epoch.
    pub train_loss: Vec<f64>,
    /// Per-layer (early-exit) accuracies; None when evaluation was skipped.
    pub train_acc: Option<Vec<f64>>,
    pub test_acc: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub depth: usize,
    pub epochs: Vec<EpochRecord>,
}

impl RunMetrics {
    pub fn new(depth: usize) -> Self {
        RunMetrics {
            depth,
            epochs: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: EpochRecord) {
        self.epochs.push(rec);
    }

    pub fn final_test_acc(&self) -> Option<&Vec<f64>> {
        self.epochs.iter().rev().find_map(|e| e.test_acc.as_ref())
    }

    pub fn final_train_acc(&self) -> Option<&Vec<f64>> {
        self.epochs.iter().rev().find_map(|e| e.train_acc.as_ref())
    }

    /// Output-layer test accuracy from the last evaluated epoch.
    pub fn final_output_test_acc(&self) -> Option<f64> {
        self.final_test_acc().map(|a| *a.last().unwrap())
    }

    /// CSV rows: epoch,layer,split,accuracy,loss. Loss is blank for test rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,layer,split,accuracy,loss\n");
        for rec in &self.epochs {
            for k in 0..self.depth {
                let acc = rec
                    .train_acc
                    .as_ref()
                    .map(|a| format!("{:.6}", a[k]))
                    .unwrap_or_default();
                s.push_str(&format!(
                    "{},{},train,{},{:.6}\n",
                    rec.epoch,
                    k + 1,
                    acc,
                    rec.train_loss[k]
                ));
                if let Some(te) = &rec.test_acc {
                    s.push_str(&format!("{},{},test,{:.6},\n", rec.epoch, k + 1, te[k]));
                }
            }
        }
        s
    }
}
