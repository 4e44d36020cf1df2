//! Stage artifacts as containers. Array names and order:
//!
//! ```text
//! dataset.imds   timestamps (n), positions, velocities, accelerations (n x D),
//!                imu_dt (n), imu_accel (n x D), cp_index (k, i64),
//!                cp_position, cp_velocity (k x D), cp_radius (k),
//!                cfr (rows x TRPs x antennas x pilots, c32), cfr_sample (rows, i64)
//!                metadata: scenario, dims, carrier, imu_temperature
//! features.imds  features (rows x width), sample_index (rows, i64),
//!                block_norms (rows x blocks), train_rows, test_rows (i64)
//!                metadata: layout, report
//! labels.imds    pseudo_labels, corrections, dead_reckoning (n x D), one_sided (n, i64)
//!                metadata: segments
//! ```

use ndarray::{Array2, Array4};
use serde_json::json;

use super::stages::{Labels, Prepared, Simulated};
use crate::csi::{FeatureMatrix, PreprocessReport};
use crate::error::{Error, Result};
use crate::fit::TrajectoryFit;
use crate::io::{ArrayData, Container};
use crate::sim::{CarrierConfig, ChannelDataset, ControlPoint, ImuSeries, TrajectorySeries};

fn to_i64(v: &[usize]) -> Vec<i64> {
    v.iter().map(|&x| x as i64).collect()
}

fn to_usize(v: Vec<i64>, name: &str) -> Result<Vec<usize>> {
    v.into_iter()
        .map(|x| usize::try_from(x).map_err(|_| Error::input(format!("negative index in `{name}`"))))
        .collect()
}

fn meta<T: serde::de::DeserializeOwned>(c: &Container, key: &str) -> Result<T> {
    let v = c
        .metadata
        .get(key)
        .ok_or_else(|| Error::input(format!("container metadata lacks `{key}`")))?;
    Ok(serde_json::from_value(v.clone())?)
}

pub fn simulated_to_container(sim: &Simulated, scenario: &str) -> Result<Container> {
    let t = &sim.truth;
    let mut c = Container::new(json!({
        "kind": "dataset",
        "scenario": scenario,
        "dims": t.dims(),
        "carrier": sim.channel.carrier,
        "imu_temperature": sim.imu.temperature,
    }));
    c.push_f64_1d("timestamps", &t.timestamps)?;
    c.push_f64_2d("positions", &t.positions)?;
    c.push_f64_2d("velocities", &t.velocities)?;
    c.push_f64_2d("accelerations", &t.accelerations)?;
    c.push_f64_1d("imu_dt", &sim.imu.dt)?;
    c.push_f64_2d("imu_accel", &sim.imu.accel)?;
    let cps = &sim.control_points;
    let d = t.dims();
    c.push_i64_1d("cp_index", &to_i64(&cps.iter().map(|p| p.sample_index).collect::<Vec<_>>()))?;
    let stack = |f: fn(&ControlPoint) -> &ndarray::Array1<f64>| {
        Array2::from_shape_fn((cps.len(), d), |(i, j)| f(&cps[i])[j])
    };
    c.push_f64_2d("cp_position", &stack(|p| &p.position))?;
    c.push_f64_2d("cp_velocity", &stack(|p| &p.velocity))?;
    c.push_f64_1d("cp_radius", &cps.iter().map(|p| p.radius).collect::<Vec<_>>())?;
    let cfr = &sim.channel.cfr;
    c.push("cfr", cfr.shape(), ArrayData::C32(cfr.iter().copied().collect()))?;
    c.push_i64_1d("cfr_sample", &to_i64(&sim.channel.sample_index))?;
    Ok(c)
}

pub fn simulated_from_container(c: &Container) -> Result<Simulated> {
    let truth = TrajectorySeries {
        timestamps: c.f64_1d("timestamps")?.to_vec(),
        positions: c.f64_2d("positions")?,
        velocities: c.f64_2d("velocities")?,
        accelerations: c.f64_2d("accelerations")?,
    };
    let imu = ImuSeries::new(c.f64_1d("imu_dt")?.to_vec(), c.f64_2d("imu_accel")?, meta(c, "imu_temperature")?)?;
    let idx = to_usize(c.i64_1d("cp_index")?, "cp_index")?;
    let pos = c.f64_2d("cp_position")?;
    let vel = c.f64_2d("cp_velocity")?;
    let radius = c.f64_1d("cp_radius")?;
    if pos.nrows() != idx.len() || vel.nrows() != idx.len() || radius.len() != idx.len() {
        return Err(Error::shape("control-point arrays disagree in length"));
    }
    let control_points = idx
        .iter()
        .enumerate()
        .map(|(i, &sample_index)| ControlPoint {
            sample_index,
            position: pos.row(i).to_owned(),
            velocity: vel.row(i).to_owned(),
            radius: radius[i],
        })
        .collect();
    let cfr = c.c32_nd("cfr")?;
    let cfr: Array4<_> = cfr
        .into_dimensionality()
        .map_err(|_| Error::shape("`cfr` must be 4-dimensional"))?;
    let carrier: CarrierConfig = meta(c, "carrier")?;
    let channel = ChannelDataset {
        cfr,
        sample_index: to_usize(c.i64_1d("cfr_sample")?, "cfr_sample")?,
        carrier,
    };
    Ok(Simulated {
        truth,
        imu,
        control_points,
        channel,
    })
}

pub fn prepared_to_container(p: &Prepared) -> Result<Container> {
    let mut c = Container::new(json!({
        "kind": "features",
        "layout": p.features.layout,
        "report": p.report,
    }));
    c.push_f64_2d("features", &p.features.features)?;
    c.push_i64_1d("sample_index", &to_i64(&p.features.sample_index))?;
    c.push_f64_2d("block_norms", &p.features.block_norms)?;
    c.push_i64_1d("train_rows", &to_i64(&p.train_rows))?;
    c.push_i64_1d("test_rows", &to_i64(&p.test_rows))?;
    Ok(c)
}

pub fn prepared_from_container(c: &Container) -> Result<Prepared> {
    let report: PreprocessReport = meta(c, "report")?;
    Ok(Prepared {
        features: FeatureMatrix {
            features: c.f64_2d("features")?,
            sample_index: to_usize(c.i64_1d("sample_index")?, "sample_index")?,
            layout: meta(c, "layout")?,
            block_norms: c.f64_2d("block_norms")?,
        },
        report,
        train_rows: to_usize(c.i64_1d("train_rows")?, "train_rows")?,
        test_rows: to_usize(c.i64_1d("test_rows")?, "test_rows")?,
    })
}

pub fn labels_to_container(l: &Labels) -> Result<Container> {
    let mut c = Container::new(json!({
        "kind": "labels",
        "segments": l.fit.segments,
    }));
    c.push_f64_2d("pseudo_labels", &l.fit.pseudo_labels)?;
    c.push_f64_2d("corrections", &l.fit.corrections)?;
    c.push_f64_2d("dead_reckoning", &l.dead_reckoning)?;
    c.push_i64_1d("one_sided", &l.fit.one_sided.iter().map(|&b| b as i64).collect::<Vec<_>>())?;
    Ok(c)
}

pub fn labels_from_container(c: &Container) -> Result<Labels> {
    Ok(Labels {
        fit: TrajectoryFit {
            pseudo_labels: c.f64_2d("pseudo_labels")?,
            one_sided: c.i64_1d("one_sided")?.into_iter().map(|b| b != 0).collect(),
            corrections: c.f64_2d("corrections")?,
            segments: meta(c, "segments")?,
        },
        dead_reckoning: c.f64_2d("dead_reckoning")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{read_container, write_container};
    use crate::pipeline::{fit_labels, prepare, simulate, ExperimentConfig};

    #[test]
    fn stage_artifacts_round_trip_through_files() {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.samples = 400;
        cfg.preprocess.feature_bins = 16;
        let sim = simulate(&cfg, 2).unwrap();
        let prep = prepare(&cfg, &sim, 2).unwrap();
        let labels = fit_labels(&cfg, &sim, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.imds");

        write_container(&p, &simulated_to_container(&sim, "desk").unwrap()).unwrap();
        assert_eq!(simulated_from_container(&read_container(&p).unwrap()).unwrap(), sim);
        write_container(&p, &prepared_to_container(&prep).unwrap()).unwrap();
        assert_eq!(prepared_from_container(&read_container(&p).unwrap()).unwrap(), prep);
        write_container(&p, &labels_to_container(&labels).unwrap()).unwrap();
        assert_eq!(labels_from_container(&read_container(&p).unwrap()).unwrap(), labels);
    }
}
