//! Writes a volume, a label map, and a displacement field to NIfTI and the raw
//! sidecar format, then reads them back.

use cyclereg::io::{nifti, raw};
use cyclereg::phantom::{make_pair, PhantomSpec};

fn main() -> cyclereg::Result<()> {
    let pair = make_pair(&PhantomSpec {
        dims: [32, 32, 32],
        blob_radius: (4.0, 8.0),
        field_magnitude: 4.0,
        ..Default::default()
    })?;
    let dir = std::env::temp_dir().join("cyclereg_nifti_example");
    std::fs::create_dir_all(&dir).map_err(|e| cyclereg::Error::InvalidInput(e.to_string()))?;

    nifti::write_volume(&dir.join("fixed.nii.gz"), &pair.fixed)?;
    nifti::write_labels(&dir.join("labels.nii.gz"), &pair.fixed_labels)?;
    nifti::write_field(&dir.join("field.nii.gz"), &pair.field)?;
    raw::write_volume(&dir.join("fixed.raw"), &pair.fixed)?;

    println!(
        "volume round trip exact: {}",
        nifti::read_volume(&dir.join("fixed.nii.gz"))? == pair.fixed
    );
    println!(
        "labels round trip exact: {}",
        nifti::read_labels(&dir.join("labels.nii.gz"))? == pair.fixed_labels
    );
    println!(
        "field round trip exact:  {}",
        nifti::read_field(&dir.join("field.nii.gz"))? == pair.field
    );
    println!(
        "raw round trip exact:    {}",
        raw::read_volume(&dir.join("fixed.raw"))? == pair.fixed
    );
    println!("files in {}", dir.display());
    Ok(())
}
