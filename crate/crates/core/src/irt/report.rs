//! How hard a bank is for a student of average ability.

use serde::{Deserialize, Serialize};

use super::model::IrtModel;

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item_id: String,
    pub beta: f64,
    pub alpha: f64,
    pub c: f64,
    /// P(correct) at ability zero.
    pub p_avg: f64,
    pub unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageStudentReport {
    pub items: Vec<ItemSummary>,
    /// Counts over ten equal bins of `[0, 1]`; the last bin is closed.
    pub histogram: [usize; HISTOGRAM_BINS],
    /// Items the average student answers correctly more often than not.
    pub easy: usize,
    pub hard: usize,
    /// Every item favors the average student.
    pub all_easy: bool,
}

impl AverageStudentReport {
    /// Easy and hard counts agree within two binomial standard deviations
    /// of a fair split.
    pub fn is_balanced(&self) -> bool {
        let n = (self.easy + self.hard) as f64;
        (self.easy as f64 - self.hard as f64).abs() <= 2.0 * n.sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("item_id,beta,alpha,c,p_avg\n");
        for s in &self.items {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                s.item_id, s.beta, s.alpha, s.c, s.p_avg
            ));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lower,bin_upper,count\n");
        for (k, c) in self.histogram.iter().enumerate() {
            out.push_str(&format!(
                "{:.1},{:.1},{}\n",
                k as f64 / HISTOGRAM_BINS as f64,
                (k + 1) as f64 / HISTOGRAM_BINS as f64,
                c
            ));
        }
        out
    }
}

pub fn average_student_report(model: &IrtModel) -> AverageStudentReport {
    let mut histogram = [0usize; HISTOGRAM_BINS];
    let mut easy = 0;
    let mut hard = 0;
    let items: Vec<ItemSummary> = (0..model.n_items())
        .map(|i| {
            let p = model.item(i).expect("index in range");
            let p_avg = p.prob(0.0);
            let bin = ((p_avg * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            histogram[bin] += 1;
            if p_avg > 0.5 {
                easy += 1;
            } else if p_avg < 0.5 {
                hard += 1;
            }
            let item_id = model.item_ids[i].clone();
            ItemSummary {
                unreliable: model.flags.iter().any(|f| f.item_id() == item_id),
                item_id,
                beta: p.beta,
                alpha: p.alpha,
                c: p.guessing,
                p_avg,
            }
        })
        .collect();
    let all_easy = !items.is_empty() && easy == items.len();
    AverageStudentReport {
        items,
        histogram,
        easy,
        hard,
        all_easy,
    }
}
