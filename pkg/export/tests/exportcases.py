"""Architectures exercised by the export test suite, with expected dims."""

EXPORT_SPECS = {
    "alexnet-imagenet": ("first_fc", 4096),
    "vgg16-imagenet": ("first_fc", 4096),
    "resnet50-imagenet": ("avgpool", 2048),
    "resnet50-places365": ("avgpool", 2048),
}
