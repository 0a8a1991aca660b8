/**
 * Image-folder scanning (class-per-subfolder convention) and PNG decoding.
 */

import { promises as fs } from 'fs';
import path from 'path';
import { PNG } from 'pngjs';

export interface ImageEntry {
  file: string;
  imageId: string;
  classId: number;
  className: string;
}

export interface DecodedImage {
  height: number;
  width: number;
  /** RGB float32 in [0, 255], raster order, length h*w*3. */
  pixels: Float32Array;
}

const IMAGE_EXTENSIONS = new Set(['.png']);

/**
 * Walk inputDir/<class>/<image> and assign class ids by sorted folder name.
 */
export async function listImageFolders(inputDir: string): Promise<ImageEntry[]> {
  const dirents = await fs.readdir(inputDir, { withFileTypes: true });
  const classes = dirents
    .filter((d) => d.isDirectory())
    .map((d) => d.name)
    .sort();
  if (classes.length === 0) {
    throw new Error(`no class subfolders under ${inputDir}`);
  }
  const entries: ImageEntry[] = [];
  for (let classId = 0; classId < classes.length; classId++) {
    const className = classes[classId];
    const files = (await fs.readdir(path.join(inputDir, className))).sort();
    for (const file of files) {
      if (!IMAGE_EXTENSIONS.has(path.extname(file).toLowerCase())) continue;
      entries.push({
        file: path.join(inputDir, className, file),
        imageId: `${className}_${path.parse(file).name}`,
        classId,
        className,
      });
    }
  }
  return entries;
}

export async function decodePng(file: string): Promise<DecodedImage> {
  const raw = await fs.readFile(file);
  const png = PNG.sync.read(raw);
  const pixels = new Float32Array(png.height * png.width * 3);
  for (let i = 0; i < png.height * png.width; i++) {
    pixels[i * 3] = png.data[i * 4];
    pixels[i * 3 + 1] = png.data[i * 4 + 1];
    pixels[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return { height: png.height, width: png.width, pixels };
}

export function encodePng(height: number, width: number,
                          rgb: Uint8Array | Float32Array): Buffer {
  const png = new PNG({ height, width });
  for (let i = 0; i < height * width; i++) {
    png.data[i * 4] = rgb[i * 3];
    png.data[i * 4 + 1] = rgb[i * 3 + 1];
    png.data[i * 4 + 2] = rgb[i * 3 + 2];
    png.data[i * 4 + 3] = 255;
  }
  return PNG.sync.write(png);
}
