mod augment;
mod io;
mod phantom;
mod preprocess;
mod raster;
mod split;

pub use augment::{augment, flip_sample, gamma_sample, rotate_sample, scale_sample, AugmentPlan, Flip, Rotation};
pub use io::{list_pngs, load_dataset, read_image, read_manifest, read_mask, save_dataset, write_image, write_json, write_manifest, write_mask};
pub use phantom::{point_in_polygon, synth_phantom, synth_phantoms, Phantom};
pub use preprocess::{preprocess, resize_bilinear, resize_nearest};
pub use raster::{Label, Mask, Raster, Sample};
pub use split::{split, Split, SplitSpec};
