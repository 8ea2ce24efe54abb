#!/usr/bin/env node
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { exportFolder } from './export.js';

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName('vfm-export')
    .usage('$0 --images <dir> --out <dir> --model <id> [--masks <dir>]')
    .option('images', { type: 'string', demandOption: true, describe: 'input image folder' })
    .option('out', { type: 'string', demandOption: true, describe: 'output folder' })
    .option('model', { type: 'string', default: 'patchstat-768', describe: 'feature model id' })
    .option('masks', { type: 'string', describe: 'optional ground-truth mask folder' })
    .option('resize', { type: 'number', default: 224, describe: 'square resize in pixels' })
    .option('patch', { type: 'number', default: 16, describe: 'patch size in pixels' })
    .strict()
    .help()
    .parse();

  try {
    const result = exportFolder({
      imagesDir: args.images,
      outDir: args.out,
      modelId: args.model,
      masksDir: args.masks,
      resize: args.resize,
      patchSize: args.patch,
    });
    console.log(
      `exported ${result.entries.length} image(s) to ${args.out}` +
        (result.skipped.length ? `, skipped ${result.skipped.length}` : ''),
    );
    console.log(`dataset manifest: ${result.datasetPath}`);
    return 0;
  } catch (error) {
    console.error(`error: ${(error as Error).message}`);
    return 1;
  }
}

const invokedDirectly = process.argv[1]?.endsWith('cli.js');
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => process.exit(code));
}
