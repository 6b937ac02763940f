/**
 * Minimal NIfTI-1 I/O for the training harness: float32 images and uint8
 * label maps, single-file .nii / .nii.gz, x-fastest (Fortran) voxel order.
 */
import { readFileSync, writeFileSync } from "node:fs";
import { gzipSync, gunzipSync } from "node:zlib";

export interface Volume {
  shape: [number, number, number];
  spacing: [number, number, number];
  affine: number[]; // row-major 4x4
  data: Float32Array;
}

const HEADER_SIZE = 348;
const VOX_OFFSET = 352;

export function readNifti(path: string): Volume {
  let buf = readFileSync(path);
  if (path.endsWith(".gz")) buf = gunzipSync(buf);
  if (buf.length < HEADER_SIZE) {
    throw new Error(`truncated NIfTI header in ${path}: ${buf.length} bytes`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const little = view.getInt32(0, true) === HEADER_SIZE;
  if (!little && view.getInt32(0, false) !== HEADER_SIZE) {
    throw new Error(`bad sizeof_hdr in ${path}`);
  }
  const dim = (i: number) => view.getInt16(40 + 2 * i, little);
  const shape: [number, number, number] = [
    Math.max(1, dim(1)),
    Math.max(1, dim(2)),
    Math.max(1, dim(3)),
  ];
  const datatype = view.getInt16(70, little);
  const pixdim = (i: number) => Math.abs(view.getFloat32(76 + 4 * i, little)) || 1;
  const spacing: [number, number, number] = [pixdim(1), pixdim(2), pixdim(3)];
  const voxOffset = view.getFloat32(108, little) || VOX_OFFSET;
  const slope = view.getFloat32(112, little) || 1;
  const inter = view.getFloat32(116, little);
  const affine: number[] = [];
  for (let i = 0; i < 12; i++) affine.push(view.getFloat32(280 + 4 * i, little));
  affine.push(0, 0, 0, 1);

  const n = shape[0] * shape[1] * shape[2];
  const data = new Float32Array(n);
  const start = Math.floor(voxOffset);
  const read = (i: number): number => {
    switch (datatype) {
      case 2:
        return view.getUint8(start + i);
      case 4:
        return view.getInt16(start + 2 * i, little);
      case 8:
        return view.getInt32(start + 4 * i, little);
      case 16:
        return view.getFloat32(start + 4 * i, little);
      case 64:
        return view.getFloat64(start + 8 * i, little);
      default:
        throw new Error(`unsupported NIfTI datatype ${datatype} in ${path}`);
    }
  };
  for (let i = 0; i < n; i++) data[i] = read(i) * slope + inter;
  return { shape, spacing, affine, data };
}

export function writeNifti(path: string, vol: Volume, labels = false): void {
  const n = vol.shape[0] * vol.shape[1] * vol.shape[2];
  const itemSize = labels ? 1 : 4;
  const buf = Buffer.alloc(VOX_OFFSET + n * itemSize);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  view.setInt32(0, HEADER_SIZE, true);
  view.setInt16(40, 3, true);
  for (let i = 0; i < 3; i++) view.setInt16(42 + 2 * i, vol.shape[i], true);
  for (let i = 3; i < 7; i++) view.setInt16(42 + 2 * i, 1, true);
  view.setInt16(70, labels ? 2 : 16, true);
  view.setInt16(72, labels ? 8 : 32, true);
  view.setFloat32(76, 1, true); // qfac
  for (let i = 0; i < 3; i++) view.setFloat32(80 + 4 * i, vol.spacing[i], true);
  view.setFloat32(108, VOX_OFFSET, true);
  view.setFloat32(112, 1, true); // scl_slope
  view.setInt16(252, 0, true); // qform_code: sform only
  view.setInt16(254, 1, true);
  for (let i = 0; i < 12; i++) view.setFloat32(280 + 4 * i, vol.affine[i], true);
  buf.write("n+1\0", 344, "latin1");
  for (let i = 0; i < n; i++) {
    if (labels) view.setUint8(VOX_OFFSET + i, vol.data[i]);
    else view.setFloat32(VOX_OFFSET + 4 * i, vol.data[i], true);
  }
  writeFileSync(path, path.endsWith(".gz") ? gzipSync(buf) : buf);
}

export function identityAffine(spacing: [number, number, number]): number[] {
  return [spacing[0], 0, 0, 0, 0, spacing[1], 0, 0, 0, 0, spacing[2], 0, 0, 0, 0, 1];
}
