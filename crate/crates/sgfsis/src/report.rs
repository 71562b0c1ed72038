//! Metric report serialisation.
//!
//! A report flattens into records `(metric, class, value)`: `class` is set
//! only for per-class entries and `value` is `None` when undefined. The
//! three output forms carry the same records:
//!
//! - text: `metric = value` or `metric.CLASS = value`, `undefined` for
//!   `None`;
//! - CSV: header `metric,class,value`, empty cells for missing class or
//!   value;
//! - JSON lines: one object `{"metric": …, "class": …|null, "value": …|null}`
//!   per record.

use serde::Serialize;
use sgfsis_core::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub metric: &'static str,
    pub class: Option<String>,
    pub value: Option<f64>,
}

/// Records in a fixed order: summary metrics, then per-class F1 and PQ.
pub fn records(r: &MetricsReport) -> Vec<Record> {
    let top = |metric, value| Record {
        metric,
        class: None,
        value,
    };
    let mut out = vec![
        top("aji", r.aji),
        top("mpq", r.mpq),
        top("f1_novel", r.f1_novel),
        top("f1_base", r.f1_base),
        top("dice", r.dice),
    ];
    for (metric, map) in [("f1", &r.f1_per_class), ("pq", &r.pq_per_class)] {
        out.extend(map.iter().map(|(c, &v)| Record {
            metric,
            class: Some(c.clone()),
            value: v,
        }));
    }
    out
}

fn value_text(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

pub fn to_text(r: &MetricsReport) -> String {
    records(r)
        .into_iter()
        .map(|rec| match rec.class {
            Some(c) => format!("{}.{} = {}\n", rec.metric, c, value_text(rec.value)),
            None => format!("{} = {}\n", rec.metric, value_text(rec.value)),
        })
        .collect()
}

pub fn to_csv(r: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "class", "value"]).expect("in-memory write");
    for rec in records(r) {
        let v = rec.value.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([rec.metric, rec.class.as_deref().unwrap_or(""), v.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn to_json_lines(r: &MetricsReport) -> String {
    records(r)
        .iter()
        .map(|rec| serde_json::to_string(rec).expect("plain record") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsReport {
        MetricsReport {
            f1_per_class: [("EPI".to_string(), Some(0.5)), ("LYM".to_string(), None)].into(),
            f1_novel: Some(0.5),
            f1_base: None,
            aji: Some(0.75),
            mpq: Some(0.25),
            pq_per_class: [("EPI".to_string(), Some(0.25))].into(),
            dice: Some(1.0),
        }
    }

    #[test]
    fn text_form() {
        assert_eq!(
            to_text(&sample()),
            "aji = 0.75\nmpq = 0.25\nf1_novel = 0.5\nf1_base = undefined\ndice = 1\n\
             f1.EPI = 0.5\nf1.LYM = undefined\npq.EPI = 0.25\n"
        );
    }

    #[test]
    fn csv_and_json_carry_the_same_records() {
        let r = sample();
        let csv = to_csv(&r);
        let json = to_json_lines(&r);
        assert_eq!(csv.lines().count(), records(&r).len() + 1);
        assert_eq!(json.lines().count(), records(&r).len());
        assert!(csv.contains("f1,LYM,\n"));
        let first: serde_json::Value = serde_json::from_str(json.lines().next().unwrap()).unwrap();
        assert_eq!(first, serde_json::json!({"metric": "aji", "class": null, "value": 0.75}));
    }
}
