//! Procrustes-aligned Chamfer evaluation and the CSV/JSON report.

use hoi_core::body::BodyModel;
use hoi_core::fit::HOIInstance;
use hoi_core::geom::{chamfer_distance, locate_all, procrustes_align, sample_surface, Mesh, PointCloud};
use hoi_core::io::mix_seed;
use hoi_core::Result;
use serde::Serialize;

use crate::EvalArgs;

/// Body and object Chamfer distances (meters) after one similarity
/// transform aligns the predicted body+object vertices to the ground truth.
pub fn evaluate_pair(
    body: &BodyModel,
    template: &Mesh,
    pred: &HOIInstance,
    gt: &HOIInstance,
    args: &EvalArgs,
) -> Result<(f64, f64)> {
    let pb = body.forward(&pred.body)?;
    let po = pred.object_mesh(template);
    let gb = body.forward(&gt.body)?;
    let go = gt.object_mesh(template);
    let mut src = pb.vertices.clone();
    src.extend(&po.vertices);
    let mut dst = gb.vertices.clone();
    dst.extend(&go.vertices);
    let sim = procrustes_align(&PointCloud::new(src)?, &PointCloud::new(dst)?)?;
    let align = |m: &Mesh| Mesh {
        vertices: m.vertices.iter().map(|v| sim.apply(v)).collect(),
        faces: m.faces.clone(),
    };
    let (pb, po) = (align(&pb), align(&po));
    let body_sp = sample_surface(&gb, args.body_samples, mix_seed(args.seed, 1))?;
    let obj_sp = sample_surface(&go, args.object_samples, mix_seed(args.seed, 2))?;
    let cd = |a: &Mesh, b: &Mesh, sp| -> Result<f64> {
        chamfer_distance(
            &PointCloud::new(locate_all(a, sp)?)?,
            &PointCloud::new(locate_all(b, sp)?)?,
        )
    };
    Ok((cd(&pb, &gb, &body_sp)?, cd(&po, &go, &obj_sp)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub record: usize,
    pub category: u32,
    pub body_chamfer: f64,
    pub object_chamfer: f64,
    /// Time spent producing this prediction.
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub stage: String,
    pub count: usize,
    pub body_mean: f64,
    pub body_std: f64,
    pub object_mean: f64,
    pub object_std: f64,
    pub mean_millis: f64,
    pub dataset_hash: String,
    pub predictions_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn new(stage: &str, dataset_hash: u64, predictions_hash: u64, rows: Vec<EvalRow>) -> Self {
        let body: Vec<f64> = rows.iter().map(|r| r.body_chamfer).collect();
        let object: Vec<f64> = rows.iter().map(|r| r.object_chamfer).collect();
        let millis: Vec<f64> = rows.iter().map(|r| r.millis).collect();
        let (body_mean, body_std) = mean_std(&body);
        let (object_mean, object_std) = mean_std(&object);
        let summary = EvalSummary {
            stage: stage.to_string(),
            count: rows.len(),
            body_mean,
            body_std,
            object_mean,
            object_std,
            mean_millis: mean_std(&millis).0,
            dataset_hash: format!("{dataset_hash:016x}"),
            predictions_hash: format!("{predictions_hash:016x}"),
        };
        Self { rows, summary }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("record,category,body_chamfer,object_chamfer,millis\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:?},{:?},{:?}\n",
                r.record, r.category, r.body_chamfer, r.object_chamfer, r.millis
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}
