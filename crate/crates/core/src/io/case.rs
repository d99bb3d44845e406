//! Patient-equivalent case bundles and their on-disk directory layout.
//!
//! A case directory holds one file per image, named by role:
//! `pwi`, `rcbf`, `rcbv`, `mtt`, `ttp`, `tmax`, `adc` and optionally `gt`.
//! Each is read from `<name>.pwt` if present, else `<name>.nii` or
//! `<name>.nii.gz`. Writing always produces `.pwt`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{nifti, raw};
use crate::tensor::{Volume3D, Volume4D};

/// The six standard perfusion and diffusion maps, in channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MapKind {
    Rcbf,
    Rcbv,
    Mtt,
    Ttp,
    Tmax,
    Adc,
}

impl MapKind {
    pub const ALL: [MapKind; 6] = [
        MapKind::Rcbf,
        MapKind::Rcbv,
        MapKind::Mtt,
        MapKind::Ttp,
        MapKind::Tmax,
        MapKind::Adc,
    ];

    /// Lower-case file stem.
    pub fn file_stem(self) -> &'static str {
        match self {
            MapKind::Rcbf => "rcbf",
            MapKind::Rcbv => "rcbv",
            MapKind::Mtt => "mtt",
            MapKind::Ttp => "ttp",
            MapKind::Tmax => "tmax",
            MapKind::Adc => "adc",
        }
    }

    /// Display label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            MapKind::Rcbf => "rCBF",
            MapKind::Rcbv => "rCBV",
            MapKind::Mtt => "MTT",
            MapKind::Ttp => "TTP",
            MapKind::Tmax => "Tmax",
            MapKind::Adc => "ADC",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One volume per [`MapKind`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerfusionMaps {
    maps: [Volume3D; 6],
}

impl PerfusionMaps {
    /// Maps in [`MapKind::ALL`] order; all must share dims and spacing.
    pub fn new(maps: [Volume3D; 6]) -> Result<Self> {
        let dims = maps[0].dims();
        let spacing = maps[0].spacing();
        for (m, kind) in maps.iter().zip(MapKind::ALL) {
            if m.dims() != dims || m.spacing() != spacing {
                return Err(Error::Shape(format!(
                    "{} map has dims {:?}/spacing {:?}, expected {:?}/{:?}",
                    kind.label(),
                    m.dims(),
                    m.spacing(),
                    dims,
                    spacing
                )));
            }
        }
        Ok(Self { maps })
    }

    pub fn get(&self, kind: MapKind) -> &Volume3D {
        &self.maps[kind.index()]
    }

    pub fn get_mut(&mut self, kind: MapKind) -> &mut Volume3D {
        &mut self.maps[kind.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (MapKind, &Volume3D)> {
        MapKind::ALL.into_iter().zip(self.maps.iter())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.maps[0].dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.maps[0].spacing()
    }

    pub fn map_all(
        &self,
        mut f: impl FnMut(MapKind, &Volume3D) -> Result<Volume3D>,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(6);
        for (k, v) in self.iter() {
            out.push(f(k, v)?);
        }
        let maps: [Volume3D; 6] = out.try_into().expect("six maps");
        Self::new(maps)
    }
}

/// Raw PWI, the six maps, and the ground-truth lesion outcome of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseBundle {
    pub case_id: String,
    pub pwi: Volume4D,
    pub maps: PerfusionMaps,
    pub lesion_gt: Option<Volume3D>,
}

impl CaseBundle {
    pub fn new(
        case_id: impl Into<String>,
        pwi: Volume4D,
        maps: PerfusionMaps,
        lesion_gt: Option<Volume3D>,
    ) -> Result<Self> {
        if let Some(gt) = &lesion_gt {
            if gt.dims() != maps.dims() || gt.spacing() != maps.spacing() {
                return Err(Error::Shape(format!(
                    "lesion mask dims {:?} differ from map dims {:?}",
                    gt.dims(),
                    maps.dims()
                )));
            }
            if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Data("lesion mask must be binary".into()));
            }
        }
        Ok(Self {
            case_id: case_id.into(),
            pwi,
            maps,
            lesion_gt,
        })
    }
}

fn find_image(dir: &Path, stem: &str) -> Option<std::path::PathBuf> {
    ["pwt", "nii", "nii.gz"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.exists())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_volume3d(dir: &Path, stem: &str) -> Result<Volume3D> {
    let path = find_image(dir, stem)
        .ok_or_else(|| Error::Data(format!("{}: missing {stem} image", dir.display())))?;
    if path.extension().is_some_and(|e| e == "pwt") {
        raw::load_volume3d(&path)
    } else {
        nifti::parse_nifti(&read_bytes(&path)?)?.into_3d()
    }
}

pub fn load_volume4d(dir: &Path, stem: &str) -> Result<Volume4D> {
    let path = find_image(dir, stem)
        .ok_or_else(|| Error::Data(format!("{}: missing {stem} image", dir.display())))?;
    if path.extension().is_some_and(|e| e == "pwt") {
        raw::load_volume4d(&path)
    } else {
        nifti::parse_nifti(&read_bytes(&path)?)?.into_4d()
    }
}

/// Reads a case directory. The case id is the directory name.
pub fn read_case_dir(dir: &Path) -> Result<CaseBundle> {
    let case_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".into());
    let pwi = load_volume4d(dir, "pwi")?;
    let mut maps = Vec::with_capacity(6);
    for kind in MapKind::ALL {
        maps.push(load_volume3d(dir, kind.file_stem())?);
    }
    let maps = PerfusionMaps::new(maps.try_into().expect("six maps"))?;
    let gt = match find_image(dir, "gt") {
        Some(_) => Some(load_volume3d(dir, "gt")?),
        None => None,
    };
    CaseBundle::new(case_id, pwi, maps, gt)
}

/// Writes `pwi.pwt`, the six map files and `gt.pwt` when present.
pub fn write_case_dir(bundle: &CaseBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    raw::save(dir.join("pwi.pwt"), &raw::write_volume4d(&bundle.pwi))?;
    for (kind, vol) in bundle.maps.iter() {
        raw::save(
            dir.join(format!("{}.pwt", kind.file_stem())),
            &raw::write_volume3d(vol),
        )?;
    }
    if let Some(gt) = &bundle.lesion_gt {
        raw::save(dir.join("gt.pwt"), &raw::write_volume3d(gt))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn vol(v: f32) -> Volume3D {
        Volume3D::new(Tensor::full(&[2, 3, 3], v), [1.0; 3]).unwrap()
    }

    fn bundle() -> CaseBundle {
        let pwi = Volume4D::new(Tensor::full(&[3, 2, 3, 3], 1.0), [1.0; 3], 1.0).unwrap();
        let maps = PerfusionMaps::new(std::array::from_fn(|i| vol(i as f32))).unwrap();
        CaseBundle::new("c0", pwi, maps, Some(vol(1.0))).unwrap()
    }

    #[test]
    fn dir_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c0");
        let b = bundle();
        write_case_dir(&b, &dir).unwrap();
        assert_eq!(read_case_dir(&dir).unwrap(), b);
    }

    #[test]
    fn nifti_fallback() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("c0");
        let b = bundle();
        write_case_dir(&b, &dir).unwrap();
        std::fs::remove_file(dir.join("adc.pwt")).unwrap();
        let adc = b.maps.get(MapKind::Adc).clone();
        std::fs::write(
            dir.join("adc.nii"),
            nifti::write_nifti(&nifti::NiftiVolume::Volume3(adc)),
        )
        .unwrap();
        assert_eq!(read_case_dir(&dir).unwrap(), b);
    }

    #[test]
    fn mismatched_maps_rejected() {
        let mut maps: [Volume3D; 6] = std::array::from_fn(|_| vol(0.0));
        maps[3] = Volume3D::new(Tensor::zeros(&[2, 3, 4]), [1.0; 3]).unwrap();
        assert!(PerfusionMaps::new(maps).is_err());
        assert!(matches!(
            CaseBundle::new("x", bundle().pwi, bundle().maps, Some(vol(0.5))),
            Err(Error::Data(_))
        ));
    }
}
