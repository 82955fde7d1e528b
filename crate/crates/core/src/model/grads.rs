use super::{Decoder, Mlp, RadianceModel};
use crate::factors::FactorGrid;

/// Gradient buffers shaped like a [`RadianceModel`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub geometry: FactorGrid<f64>,
    pub appearance: FactorGrid<f64>,
    pub basis: Vec<f64>,
    pub decoder: Option<Mlp<f64>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &RadianceModel) -> Self {
        Self {
            geometry: model.geometry.zeros_like(),
            appearance: model.appearance.zeros_like(),
            basis: vec![0.0; model.basis.len()],
            decoder: match &model.decoder {
                Decoder::Mlp(m) => Some(m.zeros_like()),
                Decoder::Sh { .. } => None,
            },
        }
    }

    /// Buffers in the same order as [`RadianceModel::param_groups_mut`].
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (prefix, grid) in [("geometry", &self.geometry), ("appearance", &self.appearance)] {
            for (name, arr) in grid.arrays() {
                out.push((format!("{prefix}.{name}"), arr.data()));
            }
        }
        out.push(("basis".to_string(), &self.basis[..]));
        if let Some(m) = &self.decoder {
            for (name, arr) in m.arrays() {
                out.push((format!("decoder.{name}"), arr));
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        self.geometry.add_assign(&other.geometry);
        self.appearance.add_assign(&other.appearance);
        for (a, b) in self.basis.iter_mut().zip(&other.basis) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (&mut self.decoder, &other.decoder) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, arr) in self.geometry.arrays_mut().into_iter().chain(self.appearance.arrays_mut()) {
            arr.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        self.basis.iter_mut().for_each(|v| *v *= s);
        if let Some(m) = &mut self.decoder {
            for (_, arr) in m.arrays_mut() {
                arr.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}
