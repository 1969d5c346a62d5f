//! Session scoring: confusion counts and fooling rates.

use std::collections::BTreeMap;
use std::io::Write;

use mrxlate_core::data::Domain;
use mrxlate_core::models::ModelKind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{Label, StudySession};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub domain: Domain,
    pub truth: Label,
    pub judgment: Label,
    pub count: usize,
}

/// Fraction of rated synthetic items judged real. `rate` is 0 when nothing
/// synthetic has been rated yet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoolingRate {
    pub synthetic_rated: usize,
    pub judged_real: usize,
    pub rate: f64,
}

impl FoolingRate {
    fn from_counts(synthetic_rated: usize, judged_real: usize) -> Self {
        let rate = if synthetic_rated == 0 {
            0.0
        } else {
            judged_real as f64 / synthetic_rated as f64
        };
        FoolingRate {
            synthetic_rated,
            judged_real,
            rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptualReport {
    pub session_id: String,
    pub total_items: usize,
    pub rated: usize,
    pub completed: bool,
    /// All eight (domain, truth, judgment) cells, zeros included.
    pub confusion: Vec<ConfusionCell>,
    pub fooling_rate_by_domain: BTreeMap<Domain, FoolingRate>,
    pub fooling_rate_by_model: BTreeMap<ModelKind, FoolingRate>,
}

/// Scores every rating recorded so far.
pub fn score_session(session: &StudySession) -> Result<PerceptualReport> {
    if session.ratings.is_empty() {
        return Err(Error::EmptySession(session.session_id.clone()));
    }
    Ok(tally(session))
}

/// As [`score_session`] but a session without ratings scores as all zeros.
pub fn tally(session: &StudySession) -> PerceptualReport {
    let mut cells: BTreeMap<(Domain, Label, Label), usize> = BTreeMap::new();
    for d in Domain::ALL {
        for t in Label::ALL {
            for j in Label::ALL {
                cells.insert((d, t, j), 0);
            }
        }
    }
    let mut by_domain: BTreeMap<Domain, (usize, usize)> = Domain::ALL.iter().map(|&d| (d, (0, 0))).collect();
    let mut by_model: BTreeMap<ModelKind, (usize, usize)> = session
        .items
        .iter()
        .filter_map(|i| i.source_model)
        .map(|m| (m, (0, 0)))
        .collect();

    for r in &session.ratings {
        let item = session.item(&r.item_id).expect("ratings refer to session items");
        *cells.get_mut(&(item.domain, item.truth, r.judgment)).unwrap() += 1;
        if item.truth == Label::Synthetic {
            let fooled = usize::from(r.judgment == Label::Real);
            let e = by_domain.get_mut(&item.domain).unwrap();
            e.0 += 1;
            e.1 += fooled;
            if let Some(m) = item.source_model {
                let e = by_model.entry(m).or_insert((0, 0));
                e.0 += 1;
                e.1 += fooled;
            }
        }
    }

    PerceptualReport {
        session_id: session.session_id.clone(),
        total_items: session.total(),
        rated: session.ratings.len(),
        completed: session.completed,
        confusion: cells
            .into_iter()
            .map(|((domain, truth, judgment), count)| ConfusionCell {
                domain,
                truth,
                judgment,
                count,
            })
            .collect(),
        fooling_rate_by_domain: by_domain
            .into_iter()
            .map(|(d, (n, k))| (d, FoolingRate::from_counts(n, k)))
            .collect(),
        fooling_rate_by_model: by_model
            .into_iter()
            .map(|(m, (n, k))| (m, FoolingRate::from_counts(n, k)))
            .collect(),
    }
}

impl PerceptualReport {
    pub fn count(&self, domain: Domain, truth: Label, judgment: Label) -> usize {
        self.confusion
            .iter()
            .find(|c| c.domain == domain && c.truth == truth && c.judgment == judgment)
            .map_or(0, |c| c.count)
    }

    /// One CSV table: `confusion` rows carry counts, `fooling_domain` and
    /// `fooling_model` rows carry rates.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "table",
            "domain",
            "source_model",
            "truth",
            "judgment",
            "count",
            "synthetic_rated",
            "judged_real",
            "fooling_rate",
        ])?;
        for c in &self.confusion {
            let n = c.count.to_string();
            w.write_record(["confusion", c.domain.as_str(), "", c.truth.as_str(), c.judgment.as_str(), &n, "", "", ""])?;
        }
        for (d, f) in &self.fooling_rate_by_domain {
            let (n, k, r) = (f.synthetic_rated.to_string(), f.judged_real.to_string(), f.rate.to_string());
            w.write_record(["fooling_domain", d.as_str(), "", "", "", "", &n, &k, &r])?;
        }
        for (m, f) in &self.fooling_rate_by_model {
            let (n, k, r) = (f.synthetic_rated.to_string(), f.judged_real.to_string(), f.rate.to_string());
            w.write_record(["fooling_model", "", m.as_str(), "", "", "", &n, &k, &r])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }
}
