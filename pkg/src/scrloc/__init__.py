from scrloc import models, tools, synth, plotting, io, utils, harness
