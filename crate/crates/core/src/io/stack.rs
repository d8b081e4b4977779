use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array3;
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;
use tiff::ColorType;

use crate::error::{Error, Result};
use crate::types::{ImageStack, VoxelGeometry};

/// Reads a single-channel (OME-)TIFF with one page per z-slice.
///
/// Physical voxel sizes come from the OME-XML `Pixels` element when present;
/// missing values fall back to the defaults.
pub fn load_stack(path: impl AsRef<Path>) -> Result<ImageStack> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let tiff_err = |page: usize, e: tiff::TiffError| Error::format(path, format!("page {page}: {e}"));
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(|e| tiff_err(0, e))?;

    let description = decoder.get_tag_ascii_string(Tag::ImageDescription).ok();
    let geometry = description
        .as_deref()
        .map(geometry_from_ome)
        .unwrap_or_default();

    let (width, height) = decoder.dimensions().map_err(|e| tiff_err(0, e))?;
    let mut slices: Vec<f64> = Vec::new();
    let mut page = 0usize;
    loop {
        let dims = decoder.dimensions().map_err(|e| tiff_err(page, e))?;
        if dims != (width, height) {
            return Err(Error::format(
                path,
                format!(
                    "page {page} is {}x{}, expected {width}x{height}",
                    dims.0, dims.1
                ),
            ));
        }
        match decoder.colortype().map_err(|e| tiff_err(page, e))? {
            ColorType::Gray(_) => {}
            other => {
                return Err(Error::format(
                    path,
                    format!("page {page} is not single-channel grayscale ({other:?})"),
                ))
            }
        }
        let data = decoder.read_image().map_err(|e| tiff_err(page, e))?;
        let expected = width as usize * height as usize;
        let before = slices.len();
        append_values(&mut slices, data);
        if slices.len() - before != expected {
            return Err(Error::format(
                path,
                format!("page {page} holds {} samples, expected {expected}", slices.len() - before),
            ));
        }
        page += 1;
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(|e| tiff_err(page, e))?;
    }

    let voxels = Array3::from_shape_vec((page, height as usize, width as usize), slices)
        .map_err(|e| Error::format(path, e.to_string()))?;
    ImageStack::new(voxels, geometry).map_err(|e| Error::format(path, e.to_string()))
}

fn append_values(out: &mut Vec<f64>, data: DecodingResult) {
    match data {
        DecodingResult::U8(v) => out.extend(v.into_iter().map(f64::from)),
        DecodingResult::U16(v) => out.extend(v.into_iter().map(f64::from)),
        DecodingResult::U32(v) => out.extend(v.into_iter().map(f64::from)),
        DecodingResult::U64(v) => out.extend(v.into_iter().map(|x| x as f64)),
        DecodingResult::F32(v) => out.extend(v.into_iter().map(f64::from)),
        DecodingResult::F64(v) => out.extend(v),
        DecodingResult::I8(v) => out.extend(v.into_iter().map(f64::from)),
        DecodingResult::I16(v) => out.extend(v.into_iter().map(f64::from)),
        DecodingResult::I32(v) => out.extend(v.into_iter().map(f64::from)),
        DecodingResult::I64(v) => out.extend(v.into_iter().map(|x| x as f64)),
    }
}

/// Writes one 64-bit float page per z-slice (ascending z) with OME-XML
/// metadata on the first page.
pub fn save_stack(stack: &ImageStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let tiff_err = |e: tiff::TiffError| Error::format(path, e.to_string());
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(tiff_err)?;
    let (depth, height, width) = stack.dims();
    let ome = ome_xml(depth, height, width, stack.geometry());
    let voxels = stack.voxels().as_standard_layout();
    let data = voxels.as_slice().expect("standard layout");
    for (z, slice) in data.chunks_exact(height * width).enumerate() {
        let mut image = encoder
            .new_image::<colortype::Gray64Float>(width as u32, height as u32)
            .map_err(tiff_err)?;
        if z == 0 {
            image
                .encoder()
                .write_tag(Tag::ImageDescription, ome.as_str())
                .map_err(tiff_err)?;
        }
        image.write_data(slice).map_err(tiff_err)?;
    }
    Ok(())
}

fn ome_xml(depth: usize, height: usize, width: usize, g: VoxelGeometry) -> String {
    format!(
        concat!(
            r#"<?xml version="1.0" encoding="UTF-8"?>"#,
            r#"<OME xmlns="http://www.openmicroscopy.org/Schemas/OME/2016-06">"#,
            r#"<Image ID="Image:0"><Pixels ID="Pixels:0" DimensionOrder="XYZCT" Type="double" "#,
            r#"SizeX="{}" SizeY="{}" SizeZ="{}" SizeC="1" SizeT="1" "#,
            r#"PhysicalSizeX="{}" PhysicalSizeY="{}" "#,
            r#"PhysicalSizeZ="{}">"#,
            r#"<Channel ID="Channel:0:0" SamplesPerPixel="1"/></Pixels></Image></OME>"#
        ),
        width, height, depth, g.dx_um, g.dy_um, g.dz_um
    )
}

fn geometry_from_ome(description: &str) -> VoxelGeometry {
    let default = VoxelGeometry::default();
    let get = |name: &str, fallback: f64| {
        xml_attr(description, name)
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v > 0.0)
            .unwrap_or(fallback)
    };
    VoxelGeometry {
        dx_um: get("PhysicalSizeX", default.dx_um),
        dy_um: get("PhysicalSizeY", default.dy_um),
        dz_um: get("PhysicalSizeZ", default.dz_um),
    }
}

fn xml_attr<'a>(xml: &'a str, name: &str) -> Option<&'a str> {
    let needle = format!(" {name}=\"");
    let start = xml.find(&needle)? + needle.len();
    let len = xml[start..].find('"')?;
    Some(&xml[start..start + len])
}
