use std::io::{Read, Write};

use nalgebra::DVector;

use crate::dynamics::{SystemModel, Trajectory};
use crate::{Error, Result};

/// Episodes collected on one system. All episodes share dimensions and horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeDataset {
    state_dim: usize,
    input_dim: usize,
    horizon: usize,
    episodes: Vec<Trajectory>,
}

impl EpisodeDataset {
    pub fn new(state_dim: usize, input_dim: usize, horizon: usize) -> Self {
        Self {
            state_dim,
            input_dim,
            horizon,
            episodes: Vec::new(),
        }
    }

    pub fn for_model(model: &SystemModel) -> Self {
        Self::new(model.state_dim(), model.input_dim(), model.horizon())
    }

    pub fn from_episodes(model: &SystemModel, episodes: Vec<Trajectory>) -> Result<Self> {
        let mut data = Self::for_model(model);
        data.extend(episodes)?;
        Ok(data)
    }

    pub fn push(&mut self, episode: Trajectory) -> Result<()> {
        if episode.horizon() != self.horizon
            || episode.states.len() != self.horizon + 1
            || episode.states.iter().any(|x| x.len() != self.state_dim)
            || episode.inputs.iter().any(|u| u.len() != self.input_dim)
        {
            return Err(Error::Dimension(format!(
                "episode does not match dataset layout (d_x={}, d_u={}, T={})",
                self.state_dim, self.input_dim, self.horizon
            )));
        }
        self.episodes.push(episode);
        Ok(())
    }

    pub fn extend(&mut self, episodes: impl IntoIterator<Item = Trajectory>) -> Result<()> {
        for e in episodes {
            self.push(e)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EpisodeDataset) -> Result<()> {
        self.extend(other.episodes.iter().cloned())
    }

    pub fn episodes(&self) -> &[Trajectory] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn transitions(&self) -> impl Iterator<Item = (&DVector<f64>, &DVector<f64>, &DVector<f64>)> {
        self.episodes.iter().flat_map(|e| e.transitions())
    }

    /// Flat CSV: one row per transition with columns
    /// `episode,step,x0..,u0..,xn0..`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["episode".to_string(), "step".to_string()];
        header.extend((0..self.state_dim).map(|i| format!("x{i}")));
        header.extend((0..self.input_dim).map(|i| format!("u{i}")));
        header.extend((0..self.state_dim).map(|i| format!("xn{i}")));
        w.write_record(&header)?;
        for (k, episode) in self.episodes.iter().enumerate() {
            for (t, (x, u, xn)) in episode.transitions().enumerate() {
                let mut row = vec![k.to_string(), t.to_string()];
                row.extend(x.iter().chain(u.iter()).chain(xn.iter()).map(|v| format!("{v:e}")));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
                .count()
        };
        let (dx, du) = (count("x"), count("u"));
        if count("xn") != dx || header.len() != 2 + 2 * dx + du {
            return Err(Error::Parse("unexpected dataset header".into()));
        }

        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
            let episode = record[0].trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
            let step = record[1].trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
            let values = record.iter().skip(2).map(parse).collect::<Result<Vec<f64>>>()?;
            rows.push((episode, step, values));
        }
        rows.sort_by_key(|(e, t, _)| (*e, *t));

        let horizon = rows.iter().filter(|(e, _, _)| *e == 0).count();
        let mut data = Self::new(dx, du, horizon);
        for chunk in rows.chunk_by(|a, b| a.0 == b.0) {
            let mut states = Vec::with_capacity(chunk.len() + 1);
            let mut inputs = Vec::with_capacity(chunk.len());
            for (t, (_, step, v)) in chunk.iter().enumerate() {
                if *step != t {
                    return Err(Error::Parse(format!("missing step {t} in episode {}", chunk[0].0)));
                }
                states.push(DVector::from_column_slice(&v[..dx]));
                inputs.push(DVector::from_column_slice(&v[dx..dx + du]));
            }
            if let Some((_, _, v)) = chunk.last() {
                states.push(DVector::from_column_slice(&v[dx + du..]));
            }
            data.push(Trajectory { states, inputs })?;
        }
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn episode(xs: &[f64], us: &[f64]) -> Trajectory {
        Trajectory {
            states: xs.iter().map(|v| dvector![*v]).collect(),
            inputs: us.iter().map(|v| dvector![*v]).collect(),
        }
    }

    #[test]
    fn rejects_mismatched_horizon() {
        let mut data = EpisodeDataset::new(1, 1, 2);
        assert!(data.push(episode(&[0.0, 1.0, 2.0], &[1.0, 1.0])).is_ok());
        assert!(data.push(episode(&[0.0, 1.0], &[1.0])).is_err());
    }

    #[test]
    fn malformed_header_is_a_parse_error() {
        let csv = "episode,step,x0,u0\n0,0,1,2\n";
        assert!(matches!(EpisodeDataset::read_csv(csv.as_bytes()), Err(Error::Parse(_))));
    }

    proptest! {
        #[test]
        fn csv_round_trip(values in prop::collection::vec(-1e6f64..1e6, 3 * 7)) {
            let mut data = EpisodeDataset::new(1, 1, 3);
            for chunk in values.chunks(7) {
                data.push(episode(&chunk[..4], &chunk[4..])).unwrap();
            }
            let mut buf = Vec::new();
            data.write_csv(&mut buf).unwrap();
            let back = EpisodeDataset::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, data);
        }
    }
}
